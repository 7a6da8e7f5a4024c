#pragma once

// GPT-2 style pre-norm decoder. The forward pass records the residual stream
// after the embedding (h_0) and after every block (h_1..h_L).

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lensdyn/numerics.hpp"
#include "lensdyn/tensor_archive.hpp"
#include "lensdyn/tokenizer.hpp"

namespace lensdyn {

struct ModelConfig {
  Index vocab_size = 0;
  Index d_model = 0;
  Index n_layers = 0;
  Index n_heads = 0;
  Index d_mlp = 0;
  Index max_seq_len = 0;
  float layernorm_eps = 1e-5f;
  bool tied_unembedding = true;
  /// Optional tokenizer.json; the byte-level vocabulary is used when absent.
  std::optional<std::filesystem::path> tokenizer_file;

  void validate() const;
  Index head_dim() const { return d_model / n_heads; }

  /// Accepts the native field names as well as the GPT-2 aliases
  /// (n_embd, n_layer, n_head, n_inner, n_positions, layer_norm_epsilon).
  static ModelConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Relative tokenizer paths in the file are resolved against its directory.
ModelConfig load_model_config(const std::filesystem::path& path);

struct BlockWeights {
  VectorF ln1_gain, ln1_bias;
  MatrixF attn_qkv;  // [d x 3d], applied as x * W
  VectorF attn_qkv_bias;
  MatrixF attn_out;  // [d x d]
  VectorF attn_out_bias;
  VectorF ln2_gain, ln2_bias;
  MatrixF mlp_in;  // [d x d_mlp]
  VectorF mlp_in_bias;
  MatrixF mlp_out;  // [d_mlp x d]
  VectorF mlp_out_bias;
};

/// Final norm + unembedding: logits = unembed * layer_norm(h).
template <class Scalar>
struct LensHead {
  Vector<Scalar> norm_gain;
  Vector<Scalar> norm_bias;
  Matrix<Scalar> unembed;  // [vocab x d]
  Scalar eps;

  template <class Other>
  LensHead<Other> cast() const {
    return {norm_gain.template cast<Other>(), norm_bias.template cast<Other>(),
            unembed.template cast<Other>(), static_cast<Other>(eps)};
  }
};

/// Immutable after construction; safe to share across threads.
class ModelBundle {
 public:
  /// Validates every tensor named by `config` against its implied shape.
  static ModelBundle from_archive(const ModelConfig& config, const TensorArchive& archive);

  const ModelConfig& config() const { return config_; }
  const MatrixF& token_embedding() const { return wte_; }
  const MatrixF& position_embedding() const { return wpe_; }
  const std::vector<BlockWeights>& blocks() const { return blocks_; }
  const VectorF& final_norm_gain() const { return ln_f_gain_; }
  const VectorF& final_norm_bias() const { return ln_f_bias_; }
  /// [vocab x d]; aliases the token embedding when tied.
  const MatrixF& unembedding() const { return config_.tied_unembedding ? wte_ : lm_head_; }
  LensHead<float> head() const;
  const Tokenizer& tokenizer() const { return tokenizer_; }
  /// SHA-256 hex of the archive manifest bytes.
  const std::string& fingerprint() const { return fingerprint_; }

  /// Tensor names (GPT-2 naming) required by a config.
  static std::vector<std::string> required_tensors(const ModelConfig& config);

 private:
  ModelConfig config_;
  MatrixF wte_, wpe_, lm_head_;
  std::vector<BlockWeights> blocks_;
  VectorF ln_f_gain_, ln_f_bias_;
  Tokenizer tokenizer_ = Tokenizer::byte_level();
  std::string fingerprint_;
};

std::shared_ptr<const ModelBundle> load_model(const std::filesystem::path& archive_path,
                                              const std::filesystem::path& config_path);

struct HiddenTrace {
  std::vector<VectorF> states;  // L+1 entries, each d_model
  VectorF final_logits;
  Index probed_position = 0;
};

/// Residual stream at every position: L+1 matrices of [n x d].
struct SequenceStates {
  std::vector<MatrixF> states;
};

SequenceStates forward_sequence(const ModelBundle& bundle, std::span<const TokenId> tokens);
HiddenTrace forward(const ModelBundle& bundle, std::span<const TokenId> tokens, Index probe_position);

/// unembed(final_norm(h)).
VectorF model_head(const ModelBundle& bundle, const VectorF& h);

/// First index of the maximum; ties go to the lowest id.
TokenId argmax_lowest(const VectorF& logits);
TokenId greedy_next_token(const ModelBundle& bundle, std::span<const TokenId> tokens);

inline float gelu_tanh(float x) {
  constexpr float kSqrt2OverPi = 0.7978845608028654f;
  return 0.5f * x * (1.0f + std::tanh(kSqrt2OverPi * (x + 0.044715f * x * x * x)));
}

}  // namespace lensdyn
