#include "lensdyn/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <limits>
#include <regex>
#include <tuple>

namespace lensdyn {

namespace {

// Continued fraction for I_x(a, b), modified Lentz.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw ArgumentError("incomplete beta: a and b must be positive");
  if (!(x >= 0 && x <= 1)) throw ArgumentError("incomplete beta: x must lie in [0, 1]");
  if (x == 0) return 0;
  if (x == 1) return 1;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double dof) {
  if (!(dof > 0)) throw ArgumentError("t test: degrees of freedom must be positive");
  if (std::isinf(t)) return 0.0;
  if (std::isnan(t)) throw ArgumentError("t test: NaN statistic");
  return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

CorrelationResult pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw ArgumentError("pearson: " + std::to_string(xs.size()) + " xs vs " + std::to_string(ys.size()) + " ys");
  }
  const std::size_t n = xs.size();
  if (n < 3) throw StatsError("pearson: need at least 3 samples, got " + std::to_string(n));
  double mx = 0;
  double my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0;
  double syy = 0;
  double sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0 || syy == 0) throw StatsError("pearson: correlation undefined for constant input");

  CorrelationResult res;
  res.n = n;
  res.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double dof = static_cast<double>(n - 2);
  const double unexplained = 1.0 - res.r * res.r;
  res.standard_error = std::sqrt(unexplained / dof);
  res.p_value = unexplained <= 0 ? 0.0
                                 : student_t_two_sided_p(res.r * std::sqrt(dof / unexplained), dof);
  return res;
}

CorrelationResult incorrectness_pd_correlation(std::span<const QuestionResult> results) {
  std::vector<double> wrong;
  std::vector<double> depth;
  for (const auto& r : results) {
    wrong.push_back(r.correct ? 0.0 : 1.0);
    depth.push_back(static_cast<double>(r.prediction_depth));
  }
  return pearson(wrong, depth);
}

KappaResult cohens_kappa(std::span<const AnswerOutcome> outcomes, std::span<const int> num_choices) {
  if (outcomes.empty()) throw StatsError("cohens_kappa: no outcomes");
  if (outcomes.size() != num_choices.size()) {
    throw ArgumentError("cohens_kappa: " + std::to_string(outcomes.size()) + " outcomes vs " +
                        std::to_string(num_choices.size()) + " choice counts");
  }
  double correct = 0;
  double chance = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (!outcomes[i].sensical || !outcomes[i].correct) {
      throw PreconditionError("cohens_kappa: outcome '" + outcomes[i].question_id + "' is not sensical");
    }
    if (num_choices[i] < 2) throw ArgumentError("cohens_kappa: a question needs at least 2 choices");
    correct += *outcomes[i].correct ? 1.0 : 0.0;
    chance += 1.0 / num_choices[i];
  }
  KappaResult k;
  k.n = outcomes.size();
  k.accuracy = correct / static_cast<double>(k.n);
  k.chance_rate = chance / static_cast<double>(k.n);
  k.kappa = (k.accuracy - k.chance_rate) / (1.0 - k.chance_rate);
  return k;
}

double pd_gap(std::span<const QuestionResult> results) {
  double sum_correct = 0;
  double sum_incorrect = 0;
  std::size_t n_correct = 0;
  std::size_t n_incorrect = 0;
  for (const auto& r : results) {
    if (r.correct) {
      sum_correct += r.prediction_depth;
      ++n_correct;
    } else {
      sum_incorrect += r.prediction_depth;
      ++n_incorrect;
    }
  }
  if (n_correct == 0 || n_incorrect == 0) {
    throw StatsError("pd_gap: undefined without both correct and incorrect answers");
  }
  return sum_incorrect / static_cast<double>(n_incorrect) - sum_correct / static_cast<double>(n_correct);
}

KappaGapResult kappa_vs_gap(std::span<const DatasetPoint> points) {
  std::vector<double> kappas;
  std::vector<double> gaps;
  for (const auto& p : points) {
    kappas.push_back(p.kappa);
    gaps.push_back(p.pd_gap);
  }
  KappaGapResult out;
  out.correlation = pearson(kappas, gaps);
  const double n = static_cast<double>(points.size());
  double mx = 0;
  double my = 0;
  for (std::size_t i = 0; i < kappas.size(); ++i) {
    mx += kappas[i];
    my += gaps[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0;
  double sxy = 0;
  for (std::size_t i = 0; i < kappas.size(); ++i) {
    sxx += (kappas[i] - mx) * (kappas[i] - mx);
    sxy += (kappas[i] - mx) * (gaps[i] - my);
  }
  out.fit.slope = sxy / sxx;
  out.fit.intercept = my - out.fit.slope * mx;
  return out;
}

FormattedCell format_correlation(const CorrelationResult& res) {
  char r_text[32];
  char se_text[32];
  std::snprintf(r_text, sizeof r_text, "%.3f", res.r);
  std::snprintf(se_text, sizeof se_text, "%.3f", res.standard_error);
  FormattedCell cell;
  cell.text = std::string(r_text) + (res.p_value < 0.05 ? "*" : "") + "(" + se_text + ")";
  cell.bold = std::strtod(r_text, nullptr) > 0.300;
  return cell;
}

std::optional<std::tuple<double, double, bool>> parse_correlation_cell(std::string_view text) {
  static const std::regex pattern(R"(^(-?\d+\.\d{3})(\*?)\((\d+\.\d{3})\)$)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_match(text.begin(), text.end(), m, pattern)) return std::nullopt;
  return std::make_tuple(std::stod(m[1].str()), std::stod(m[3].str()), m[2].length() == 1);
}

}  // namespace lensdyn
