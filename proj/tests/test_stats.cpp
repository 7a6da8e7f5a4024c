#include <cmath>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "lensdyn/errors.hpp"
#include "lensdyn/stats.hpp"
#include "support.hpp"

using namespace lensdyn;
using namespace testing;

namespace {

AnswerOutcome answered(bool correct) {
  AnswerOutcome o;
  o.sensical = true;
  o.predicted_label = 'A';
  o.correct = correct;
  return o;
}

QuestionResult result(bool correct, int pd) {
  QuestionResult r;
  r.correct = correct;
  r.prediction_depth = pd;
  return r;
}

}  // namespace

TEST_CASE("pearson matches high-precision references") {
  const auto cases = nlohmann::json::parse(slurp(fixtures() / "stats" / "pearson_oracles.json"));
  REQUIRE(cases.size() == 20);
  for (const auto& c : cases) {
    const auto xs = c.at("xs").get<std::vector<double>>();
    const auto ys = c.at("ys").get<std::vector<double>>();
    CAPTURE(xs.size());
    const CorrelationResult r = pearson(xs, ys);
    CHECK(std::abs(r.r - std::stod(c.at("r").get<std::string>())) < 1e-9);
    CHECK(std::abs(r.standard_error - std::stod(c.at("se").get<std::string>())) < 1e-9);
    CHECK(std::abs(r.p_value - std::stod(c.at("p").get<std::string>())) < 1e-9);
    CHECK(r.n == xs.size());
  }
}

TEST_CASE("pearson limiting cases") {
  const std::vector<double> xs = {0, 1, 2, 3, 4};
  std::vector<double> ys;
  for (double x : xs) ys.push_back(2 * x + 1);
  const auto r = pearson(xs, ys);
  CHECK(r.r == doctest::Approx(1.0));
  CHECK(r.p_value == doctest::Approx(0.0));
  const auto g = pearson(std::vector<double>{0, 0, 1, 1}, std::vector<double>{2, 2, 5, 5});
  CHECK(g.r == doctest::Approx(1.0));
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2}), StatsError);
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), StatsError);
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2}), ArgumentError);
}

TEST_CASE("zero correlation with 102 samples has standard error 0.1") {
  std::vector<double> xs;
  std::vector<double> ys;
  for (int i = 0; i < 102; ++i) {
    xs.push_back(i % 2);
    ys.push_back((i / 2) % 2);
  }
  const auto r = pearson(xs, ys);
  CHECK(r.r == 0.0);
  CHECK(r.standard_error == 0.1);
  CHECK(r.p_value == doctest::Approx(1.0));
}

TEST_CASE("pearson is invariant under positive affine maps") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> xs(60);
  std::vector<double> ys(60);
  for (std::size_t i = 0; i < 60; ++i) {
    xs[i] = n(rng);
    ys[i] = 0.4 * xs[i] + n(rng);
  }
  std::vector<double> xs2;
  for (double x : xs) xs2.push_back(3.5 * x - 7);
  std::vector<double> ys2;
  for (double y : ys) ys2.push_back(0.25 * y + 100);
  CHECK(std::abs(pearson(xs, ys).r - pearson(xs2, ys2).r) < 1e-12);
  std::vector<double> ys3;
  for (double y : ys) ys3.push_back(-y);
  CHECK(pearson(xs, ys3).r == doctest::Approx(-pearson(xs, ys).r));
}

TEST_CASE("t distribution tail against closed forms") {
  // dof 1 is Cauchy: p = 1 - 2 atan(|t|) / pi.
  for (double t : {0.1, 1.0, 3.0, 25.0}) {
    CHECK(std::abs(student_t_two_sided_p(t, 1) - (1 - 2 * std::atan(t) / M_PI)) < 1e-13);
  }
  // dof 2: p = 1 - |t| / sqrt(2 + t^2).
  for (double t : {0.5, 2.0, 10.0}) CHECK(std::abs(student_t_two_sided_p(t, 2) - (1 - t / std::sqrt(2 + t * t))) < 1e-13);
  CHECK(regularized_incomplete_beta(2, 3, 0.0) == 0.0);
  CHECK(regularized_incomplete_beta(2, 3, 1.0) == 1.0);
  CHECK(regularized_incomplete_beta(1, 1, 0.3) == doctest::Approx(0.3));
}

TEST_CASE("incorrectness encoding makes later commitment on wrong answers positive") {
  std::vector<QuestionResult> rs = {result(true, 1), result(true, 2), result(false, 4), result(false, 5), result(true, 1)};
  CHECK(incorrectness_pd_correlation(rs).r > 0.9);
}

TEST_CASE("cohens kappa") {
  SUBCASE("perfect accuracy") {
    std::vector<AnswerOutcome> o(4, answered(true));
    CHECK(cohens_kappa(o, std::vector<int>(4, 4)).kappa == 1.0);
  }
  SUBCASE("half right on four-choice questions") {
    std::vector<AnswerOutcome> o = {answered(true), answered(false), answered(true), answered(false)};
    const auto k = cohens_kappa(o, std::vector<int>(4, 4));
    CHECK(std::abs(k.kappa - 1.0 / 3.0) < 1e-12);
    CHECK(k.accuracy == 0.5);
    CHECK(k.chance_rate == 0.25);
  }
  SUBCASE("accuracy equals chance") {
    std::vector<AnswerOutcome> o = {answered(true), answered(false)};
    CHECK(std::abs(cohens_kappa(o, std::vector<int>{2, 2}).kappa) < 1e-15);
  }
  SUBCASE("monotone in accuracy") {
    double prev = -10;
    for (int right = 0; right <= 6; ++right) {
      std::vector<AnswerOutcome> o;
      for (int i = 0; i < 6; ++i) o.push_back(answered(i < right));
      const double k = cohens_kappa(o, std::vector<int>{2, 3, 4, 5, 4, 3}).kappa;
      CHECK(k > prev);
      prev = k;
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(cohens_kappa(std::vector<AnswerOutcome>{}, std::vector<int>{}), StatsError);
    CHECK_THROWS(cohens_kappa(std::vector<AnswerOutcome>{AnswerOutcome{}}, std::vector<int>{4}));
    CHECK_THROWS(cohens_kappa(std::vector<AnswerOutcome>{answered(true)}, std::vector<int>{4, 4}));
  }
}

TEST_CASE("prediction depth gap") {
  CHECK(pd_gap(std::vector<QuestionResult>{result(true, 2), result(true, 2), result(false, 4)}) == 2.0);
  CHECK(pd_gap(std::vector<QuestionResult>{result(false, 2), result(false, 2), result(true, 4)}) == -2.0);
  CHECK(pd_gap(std::vector<QuestionResult>{result(true, 3), result(false, 3)}) == 0.0);
  std::vector<QuestionResult> a = {result(true, 1), result(false, 3), result(true, 2), result(false, 0)};
  auto aa = a;
  aa.insert(aa.end(), a.begin(), a.end());
  CHECK(pd_gap(aa) == pd_gap(a));
  CHECK_THROWS_AS(pd_gap(std::vector<QuestionResult>{result(true, 1)}), StatsError);
}

TEST_CASE("kappa versus gap regression") {
  const std::vector<DatasetPoint> line = {{"a", 0.1, 0.5}, {"b", 0.2, 1.0}, {"c", 0.4, 2.0}};
  const auto fit = kappa_vs_gap(line);
  CHECK(fit.correlation.r == doctest::Approx(1.0));
  CHECK(fit.fit.slope == doctest::Approx(5.0));
  CHECK(fit.fit.intercept == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(kappa_vs_gap(std::vector<DatasetPoint>{{"a", -1, 0}, {"b", 0, 1}, {"c", 1, 0}}).correlation.r) < 1e-12);
  CHECK_THROWS_AS(kappa_vs_gap(std::vector<DatasetPoint>{{"a", 0, 0}, {"b", 1, 1}}), StatsError);
}

TEST_CASE("table cells") {
  const auto a = format_correlation({0.192, 0.015, 0.001, 3909});
  CHECK(a.text == "0.192*(0.015)");
  CHECK(!a.bold);
  const auto b = format_correlation({0.428, 0.012, 1e-30, 4996});
  CHECK(b.text == "0.428*(0.012)");
  CHECK(b.bold);
  const auto c = format_correlation({0.010, 0.012, 0.45, 7479});
  CHECK(c.text == "0.010(0.012)");
  CHECK(!c.bold);
  const auto d = format_correlation({0.480, 0.007, 1e-40, 4935});
  CHECK(d.text == "0.480*(0.007)");
  CHECK(d.bold);
  CHECK(!format_correlation({0.3004, 0.01, 0.01, 10}).bold);
  CHECK(format_correlation({0.3006, 0.01, 0.01, 10}).bold);
  CHECK(format_correlation({0.2, 0.01, 0.05, 10}).text == "0.200(0.010)");
  CHECK(format_correlation({-0.05, 0.02, 0.2, 10}).text == "-0.050(0.020)");
}

TEST_CASE("table cells round trip through the parser") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 200; ++i) {
    const CorrelationResult r{u(rng), std::abs(u(rng)) * 0.2, std::abs(u(rng)) * 0.1, 100};
    const auto cell = format_correlation(r);
    const auto parsed = parse_correlation_cell(cell.text);
    REQUIRE(parsed);
    char rbuf[16];
    char sbuf[16];
    std::snprintf(rbuf, sizeof rbuf, "%.3f", r.r);
    std::snprintf(sbuf, sizeof sbuf, "%.3f", r.standard_error);
    CHECK(std::get<0>(*parsed) == std::stod(rbuf));
    CHECK(std::get<1>(*parsed) == std::stod(sbuf));
    CHECK(std::get<2>(*parsed) == (r.p_value < 0.05));
  }
  CHECK(!parse_correlation_cell("0.12(0.1)"));
}
