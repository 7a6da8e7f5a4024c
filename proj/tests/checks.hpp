#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "lensdyn/dynamics.hpp"
#include "lensdyn/lens.hpp"
#include "support.hpp"

namespace testing {

/// Literal reading of the definition: the smallest l whose suffix is constant
/// and equal to the final prediction, and which differs from layer l-1.
inline int brute_force_pd(std::span<const int> path) {
  const std::size_t n = path.size();
  for (std::size_t l = 0; l < n; ++l) {
    bool suffix = true;
    for (std::size_t j = l; j < n; ++j) suffix = suffix && path[j] == path[n - 1];
    const bool changed = l == 0 || path[l - 1] != path[l];
    if (suffix && changed) return static_cast<int>(l);
  }
  return -1;
}

struct PdOracleReport {
  std::size_t checked = 0;
  std::size_t mismatches = 0;
};

inline PdOracleReport pd_oracle_sweep(std::uint64_t seed = 17, int random_paths = 10000) {
  PdOracleReport rep;
  std::vector<int> path(5);
  for (int code = 0; code < 1024; ++code) {
    for (int i = 0, c = code; i < 5; ++i, c /= 4) path[static_cast<std::size_t>(i)] = c % 4;
    rep.checked += 1;
    if (compute_pd(std::span<const int>(path)) != brute_force_pd(path)) rep.mismatches += 1;
  }
  std::mt19937_64 rng(seed);
  for (int t = 0; t < random_paths; ++t) {
    const int layers = std::uniform_int_distribution<int>(0, 40)(rng);
    const int alphabet = std::uniform_int_distribution<int>(1, 6)(rng);
    std::uniform_int_distribution<int> sym(0, alphabet - 1);
    // Sticky paths so long suffixes actually occur.
    std::vector<int> p(static_cast<std::size_t>(layers + 1));
    p[0] = sym(rng);
    for (std::size_t i = 1; i < p.size(); ++i) p[i] = (rng() % 3 == 0) ? sym(rng) : p[i - 1];
    rep.checked += 1;
    if (compute_pd(std::span<const int>(p)) != brute_force_pd(p)) rep.mismatches += 1;
  }
  return rep;
}

/// Random traces of a model: random token sequences, random probe positions.
inline std::vector<HiddenTrace> random_traces(const ModelBundle& model, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(model.config().vocab_size - 1));
  std::uniform_int_distribution<int> len(1, static_cast<int>(std::min<Index>(24, model.config().max_seq_len)));
  std::vector<HiddenTrace> out;
  for (int i = 0; i < count; ++i) {
    std::vector<TokenId> t(static_cast<std::size_t>(len(rng)));
    for (auto& x : t) x = tok(rng);
    const Index probe = std::uniform_int_distribution<Index>(0, static_cast<Index>(t.size()) - 1)(rng);
    out.push_back(forward(model, t, probe));
  }
  return out;
}

struct GradientCheck {
  double weight_rel_error = 0;
  double bias_rel_error = 0;
};

/// Central differences of the summed translator objective in double precision.
inline GradientCheck translator_gradient_check(std::uint64_t seed = 3, Index rows = 12, double step = 1e-6) {
  ModelConfig c = small_config(8, 2, 256, 2);
  const auto model = random_model(c, seed, 0.5f);
  const LensHead<double> head = model->head().cast<double>();
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0, 1);
  const Index d = c.d_model;
  MatrixD states(rows, d);
  MatrixD weight(d, d);
  VectorD bias(d);
  MatrixD final_logits(rows, c.vocab_size);
  for (Index i = 0; i < states.size(); ++i) states.data()[i] = n(rng);
  for (Index i = 0; i < weight.size(); ++i) weight.data()[i] = 0.3 * n(rng);
  for (Index i = 0; i < d; ++i) bias[i] = 0.3 * n(rng);
  for (Index i = 0; i < final_logits.size(); ++i) final_logits.data()[i] = 2.0 * n(rng);
  const MatrixD targets = softmax_rows(final_logits);

  const auto analytic = translator_objective(head, weight, bias, states, targets, true);
  auto loss = [&](const MatrixD& w, const VectorD& b) {
    return translator_objective(head, w, b, states, targets, false).loss_sum;
  };
  MatrixD fd_w(d, d);
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) {
      MatrixD up = weight;
      MatrixD down = weight;
      up(i, j) += step;
      down(i, j) -= step;
      fd_w(i, j) = (loss(up, bias) - loss(down, bias)) / (2 * step);
    }
  }
  VectorD fd_b(d);
  for (Index i = 0; i < d; ++i) {
    VectorD up = bias;
    VectorD down = bias;
    up[i] += step;
    down[i] -= step;
    fd_b[i] = (loss(weight, up) - loss(weight, down)) / (2 * step);
  }
  auto rel = [](const auto& a, const auto& b) {
    const double scale = std::max({a.norm(), b.norm(), 1e-300});
    return (a - b).norm() / scale;
  };
  return {rel(analytic.weight_grad, fd_w), rel(analytic.bias_grad, fd_b)};
}

}  // namespace testing
