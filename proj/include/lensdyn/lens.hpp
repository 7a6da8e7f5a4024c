#pragma once

// Logit Lens and Tuned Lens decoding of residual-stream states, plus training
// of the Tuned Lens affine translators h -> h + A h + b.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "lensdyn/model.hpp"
#include "lensdyn/numerics.hpp"

namespace lensdyn {

enum class LensKind { logit, tuned };

const char* to_string(LensKind kind);

struct Translator {
  MatrixF weight;  // A_l, [d x d]
  VectorF bias;    // b_l, [d]
};

/// Per-layer translators for layers 0..L-1. Layer L always decodes through
/// the bare model head. A logit-kind stack stores no translators.
class LensStack {
 public:
  static LensStack logit(std::shared_ptr<const ModelBundle> model);
  static LensStack zero_tuned(std::shared_ptr<const ModelBundle> model);
  static LensStack tuned(std::shared_ptr<const ModelBundle> model, std::vector<Translator> translators);

  LensKind kind() const { return kind_; }
  const std::vector<Translator>& translators() const { return translators_; }
  const ModelBundle& model() const { return *model_; }
  const std::shared_ptr<const ModelBundle>& model_ptr() const { return model_; }
  Index n_layers() const { return model_->config().n_layers; }

 private:
  LensStack(LensKind kind, std::shared_ptr<const ModelBundle> model, std::vector<Translator> translators);

  LensKind kind_;
  std::shared_ptr<const ModelBundle> model_;
  std::vector<Translator> translators_;
};

template <class Scalar>
Vector<Scalar> translate(const Matrix<Scalar>& weight, const Vector<Scalar>& bias, const Vector<Scalar>& h) {
  return h + (weight * h + bias);
}

/// Logits for layer `layer` in 0..L.
VectorF decode_layer(const LensStack& stack, const HiddenTrace& trace, Index layer);

struct LensTrainConfig {
  double learning_rate = 1e-3;
  int steps = 1000;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Index tokens_per_step = 1 << 12;
  Index sequence_length = 128;
  std::uint64_t seed = 0;
  int workers = 1;

  /// 2^18 tokens per step, the full-scale recipe.
  static LensTrainConfig full_scale();
  void validate() const;
  AdamHyper adam() const { return {learning_rate, beta1, beta2, epsilon, weight_decay}; }
};

struct LensTrainResult {
  LensStack stack;
  /// layer_loss[step][layer]: mean KL(p_final || p_layer) on that step's batch, before the update.
  std::vector<std::vector<double>> layer_loss;
  /// Equal-weight sum over layers, per step.
  std::vector<double> total_loss;
  bool cycled_corpus = false;
  std::size_t tokens_seen = 0;
};

LensTrainResult train_tuned_lens(std::shared_ptr<const ModelBundle> model, std::span<const TokenId> corpus,
                                 const LensTrainConfig& cfg);

/// Mean KL(p_final || p_layer) per layer 0..L-1 over non-overlapping windows of the corpus.
std::vector<double> evaluate_lens_kl(const LensStack& stack, std::span<const TokenId> corpus, Index sequence_length,
                                     int workers = 1);

void save_lens(const LensStack& stack, const std::filesystem::path& path);
/// Refuses archives whose fingerprint or dimensions do not match `model`.
LensStack load_lens(const std::filesystem::path& path, std::shared_ptr<const ModelBundle> model);

// ---------------------------------------------------------------------------
// Translator objective. Rows of `states` are residual vectors h_i, rows of
// `targets` the final-layer distributions p_i.  Returns sums over rows; divide
// by the row count for means.

template <class Scalar>
struct TranslatorObjective {
  Scalar loss_sum = 0;
  Matrix<Scalar> weight_grad;  // d(loss_sum)/dA
  Vector<Scalar> bias_grad;    // d(loss_sum)/db
};

template <class Scalar>
TranslatorObjective<Scalar> translator_objective(const LensHead<Scalar>& head, const Matrix<Scalar>& weight,
                                                 const Vector<Scalar>& bias, const Matrix<Scalar>& states,
                                                 const Matrix<Scalar>& targets, bool with_gradient = true) {
  const Index n = states.rows();
  const Index d = states.cols();
  Matrix<Scalar> z = states + states * weight.transpose();
  z.rowwise() += bias.transpose();

  Matrix<Scalar> xhat(n, d);
  Vector<Scalar> inv_std(n);
  for (Index i = 0; i < n; ++i) {
    const Scalar mean = z.row(i).mean();
    const auto centered = (z.row(i).array() - mean).eval();
    const Scalar var = centered.square().sum() / static_cast<Scalar>(d);
    inv_std[i] = Scalar(1) / std::sqrt(var + head.eps);
    xhat.row(i) = centered * inv_std[i];
  }
  Matrix<Scalar> y = xhat.array().rowwise() * head.norm_gain.transpose().array();
  y.rowwise() += head.norm_bias.transpose();
  Matrix<Scalar> logits = y * head.unembed.transpose();
  require_finite(logits, "translated logits");

  // log-softmax, floored at log(kKlFloor).
  const Vector<Scalar> peak = logits.rowwise().maxCoeff();
  Matrix<Scalar> shifted = logits.colwise() - peak;
  const Vector<Scalar> log_norm = shifted.array().exp().rowwise().sum().log().matrix();
  Matrix<Scalar> log_q = shifted.colwise() - log_norm;
  const Scalar log_floor = static_cast<Scalar>(std::log(kKlFloor));

  TranslatorObjective<Scalar> out;
  for (Index i = 0; i < n; ++i) {
    Scalar row = 0;
    for (Index v = 0; v < logits.cols(); ++v) {
      const Scalar p = targets(i, v);
      if (p > Scalar(0)) row += p * (std::log(p) - std::max(log_q(i, v), log_floor));
    }
    out.loss_sum += row;
  }
  if (!with_gradient) return out;

  // dL/dlogits = q - p, then back through the unembedding and the final norm.
  const Matrix<Scalar> d_logits = log_q.array().exp().matrix() - targets;
  const Matrix<Scalar> d_y = d_logits * head.unembed;
  const Matrix<Scalar> d_xhat = d_y.array().rowwise() * head.norm_gain.transpose().array();
  Matrix<Scalar> d_z(n, d);
  for (Index i = 0; i < n; ++i) {
    const Scalar mean_dx = d_xhat.row(i).mean();
    const Scalar mean_dx_xhat = d_xhat.row(i).dot(xhat.row(i)) / static_cast<Scalar>(d);
    d_z.row(i) = inv_std[i] * (d_xhat.row(i).array() - mean_dx - xhat.row(i).array() * mean_dx_xhat).matrix();
  }
  out.weight_grad = d_z.transpose() * states;
  out.bias_grad = d_z.colwise().sum().transpose();
  return out;
}

}  // namespace lensdyn
