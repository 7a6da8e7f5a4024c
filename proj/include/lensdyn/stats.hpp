#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lensdyn/dynamics.hpp"
#include "lensdyn/mcq.hpp"

namespace lensdyn {

struct CorrelationResult {
  double r = 0;
  double standard_error = 0;  // sqrt((1 - r^2) / (n - 2))
  double p_value = 1;         // two-sided t test, n - 2 degrees of freedom
  std::size_t n = 0;
};

/// Regularized incomplete beta I_x(a, b).
double regularized_incomplete_beta(double a, double b, double x);
/// P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
double student_t_two_sided_p(double t, double dof);

CorrelationResult pearson(std::span<const double> xs, std::span<const double> ys);

/// Pearson correlation of incorrectness (0 correct, 1 incorrect) with prediction depth.
CorrelationResult incorrectness_pd_correlation(std::span<const QuestionResult> results);

struct KappaResult {
  double accuracy = 0;
  double chance_rate = 0;
  double kappa = 0;
  std::size_t n = 0;
};

KappaResult cohens_kappa(std::span<const AnswerOutcome> outcomes, std::span<const int> num_choices);

/// mean PD(incorrect) - mean PD(correct).
double pd_gap(std::span<const QuestionResult> results);

struct DatasetPoint {
  std::string dataset;
  double kappa = 0;
  double pd_gap = 0;
};

struct LineFit {
  double slope = 0;
  double intercept = 0;
};

struct KappaGapResult {
  CorrelationResult correlation;
  LineFit fit;
};

KappaGapResult kappa_vs_gap(std::span<const DatasetPoint> points);

struct FormattedCell {
  std::string text;  // "0.192*(0.015)"
  bool bold = false; // r above 0.300 at three decimals
};

FormattedCell format_correlation(const CorrelationResult& res);
/// Inverse of format_correlation's text: (r, se, significant).
std::optional<std::tuple<double, double, bool>> parse_correlation_cell(std::string_view text);

}  // namespace lensdyn
