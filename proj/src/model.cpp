#include "lensdyn/model.hpp"

#include <cmath>
#include <fstream>

namespace lensdyn {

using nlohmann::json;

void ModelConfig::validate() const {
  auto positive = [](Index v, const char* name) {
    if (v <= 0) throw ArgumentError(std::string("model config: ") + name + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(d_model, "d_model");
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(d_mlp, "d_mlp");
  positive(max_seq_len, "max_seq_len");
  if (!(layernorm_eps > 0.0f)) throw ArgumentError("model config: layernorm_eps must be positive");
  if (d_model % n_heads != 0) {
    throw ArgumentError("model config: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                        std::to_string(n_heads));
  }
}

ModelConfig ModelConfig::from_json(const json& j) {
  auto pick = [&](std::initializer_list<const char*> keys) -> const json* {
    for (const char* k : keys) {
      if (j.contains(k)) return &j[k];
    }
    return nullptr;
  };
  auto need = [&](std::initializer_list<const char*> keys) -> const json& {
    const json* v = pick(keys);
    if (!v) throw ArgumentError(std::string("model config: missing field ") + *keys.begin());
    return *v;
  };
  ModelConfig c;
  try {
    c.vocab_size = need({"vocab_size"}).get<Index>();
    c.d_model = need({"d_model", "n_embd"}).get<Index>();
    c.n_layers = need({"n_layers", "n_layer"}).get<Index>();
    c.n_heads = need({"n_heads", "n_head"}).get<Index>();
    const json* mlp = pick({"d_mlp", "n_inner"});
    c.d_mlp = (mlp && !mlp->is_null()) ? mlp->get<Index>() : 4 * c.d_model;
    c.max_seq_len = need({"max_seq_len", "n_positions"}).get<Index>();
    if (const json* eps = pick({"layernorm_eps", "layer_norm_epsilon"})) c.layernorm_eps = eps->get<float>();
    if (const json* tied = pick({"tied_unembedding", "tie_word_embeddings"})) c.tied_unembedding = tied->get<bool>();
    if (const json* tok = pick({"tokenizer_file"}); tok && !tok->is_null()) c.tokenizer_file = tok->get<std::string>();
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

json ModelConfig::to_json() const {
  json j = {{"vocab_size", vocab_size}, {"d_model", d_model},         {"n_layers", n_layers},
            {"n_heads", n_heads},       {"d_mlp", d_mlp},             {"max_seq_len", max_seq_len},
            {"layernorm_eps", layernorm_eps}, {"tied_unembedding", tied_unembedding}};
  if (tokenizer_file) j["tokenizer_file"] = tokenizer_file->string();
  return j;
}

ModelConfig load_model_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model config: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ArgumentError("model config " + path.string() + " is not valid JSON: " + e.what());
  }
  ModelConfig c = ModelConfig::from_json(j);
  if (c.tokenizer_file && c.tokenizer_file->is_relative()) c.tokenizer_file = path.parent_path() / *c.tokenizer_file;
  return c;
}

std::vector<std::string> ModelBundle::required_tensors(const ModelConfig& c) {
  std::vector<std::string> names = {"wte.weight", "wpe.weight"};
  for (Index i = 0; i < c.n_layers; ++i) {
    const std::string p = "h." + std::to_string(i) + ".";
    for (const char* suffix : {"ln_1.weight", "ln_1.bias", "attn.c_attn.weight", "attn.c_attn.bias",
                               "attn.c_proj.weight", "attn.c_proj.bias", "ln_2.weight", "ln_2.bias",
                               "mlp.c_fc.weight", "mlp.c_fc.bias", "mlp.c_proj.weight", "mlp.c_proj.bias"}) {
      names.push_back(p + suffix);
    }
  }
  names.push_back("ln_f.weight");
  names.push_back("ln_f.bias");
  if (!c.tied_unembedding) names.push_back("lm_head.weight");
  return names;
}

ModelBundle ModelBundle::from_archive(const ModelConfig& config, const TensorArchive& archive) {
  config.validate();
  for (const auto& name : required_tensors(config)) {
    if (!archive.contains(name)) throw MissingTensorError(name);
  }
  const Index d = config.d_model;
  auto mat = [&](const std::string& n, Index r, Index c) { return to_matrix(archive.at(n), r, c, n); };
  auto vec = [&](const std::string& n, Index s) { return to_vector(archive.at(n), s, n); };

  ModelBundle b;
  b.config_ = config;
  b.wte_ = mat("wte.weight", config.vocab_size, d);
  b.wpe_ = mat("wpe.weight", config.max_seq_len, d);
  for (Index i = 0; i < config.n_layers; ++i) {
    const std::string p = "h." + std::to_string(i) + ".";
    BlockWeights w;
    w.ln1_gain = vec(p + "ln_1.weight", d);
    w.ln1_bias = vec(p + "ln_1.bias", d);
    w.attn_qkv = mat(p + "attn.c_attn.weight", d, 3 * d);
    w.attn_qkv_bias = vec(p + "attn.c_attn.bias", 3 * d);
    w.attn_out = mat(p + "attn.c_proj.weight", d, d);
    w.attn_out_bias = vec(p + "attn.c_proj.bias", d);
    w.ln2_gain = vec(p + "ln_2.weight", d);
    w.ln2_bias = vec(p + "ln_2.bias", d);
    w.mlp_in = mat(p + "mlp.c_fc.weight", d, config.d_mlp);
    w.mlp_in_bias = vec(p + "mlp.c_fc.bias", config.d_mlp);
    w.mlp_out = mat(p + "mlp.c_proj.weight", config.d_mlp, d);
    w.mlp_out_bias = vec(p + "mlp.c_proj.bias", d);
    b.blocks_.push_back(std::move(w));
  }
  b.ln_f_gain_ = vec("ln_f.weight", d);
  b.ln_f_bias_ = vec("ln_f.bias", d);
  if (!config.tied_unembedding) b.lm_head_ = mat("lm_head.weight", config.vocab_size, d);

  if (config.tokenizer_file) {
    b.tokenizer_ = Tokenizer::from_file(*config.tokenizer_file);
    if (static_cast<Index>(b.tokenizer_.vocab_size()) > config.vocab_size) {
      throw VocabularyError("tokenizer has " + std::to_string(b.tokenizer_.vocab_size()) +
                            " tokens but the model vocabulary is " + std::to_string(config.vocab_size));
    }
  } else if (config.vocab_size < 256) {
    throw VocabularyError("byte-level tokenizer needs vocab_size >= 256, model has " +
                          std::to_string(config.vocab_size));
  }
  b.fingerprint_ = sha256_hex(archive.manifest);
  return b;
}

LensHead<float> ModelBundle::head() const {
  return {ln_f_gain_, ln_f_bias_, unembedding(), config_.layernorm_eps};
}

std::shared_ptr<const ModelBundle> load_model(const std::filesystem::path& archive_path,
                                              const std::filesystem::path& config_path) {
  const ModelConfig config = load_model_config(config_path);
  const TensorArchive archive = read_archive(archive_path);
  return std::make_shared<const ModelBundle>(ModelBundle::from_archive(config, archive));
}

namespace {

// Causal multi-head self-attention over the normalized block input.
MatrixF attention(const BlockWeights& w, const MatrixF& x_norm, Index n_heads) {
  const Index n = x_norm.rows();
  const Index d = x_norm.cols();
  const Index dh = d / n_heads;
  MatrixF qkv = matmul(x_norm, w.attn_qkv);
  qkv.rowwise() += w.attn_qkv_bias.transpose();
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

  MatrixF mixed = MatrixF::Zero(n, d);
  for (Index h = 0; h < n_heads; ++h) {
    const auto q = qkv.middleCols(h * dh, dh);
    const auto k = qkv.middleCols(d + h * dh, dh);
    const auto v = qkv.middleCols(2 * d + h * dh, dh);
    for (Index i = 0; i < n; ++i) {
      VectorF scores = (k.topRows(i + 1) * q.row(i).transpose()) * scale;
      const VectorF p = softmax(scores);
      mixed.row(i).segment(h * dh, dh) = p.transpose() * v.topRows(i + 1);
    }
  }
  MatrixF out = matmul(mixed, w.attn_out);
  out.rowwise() += w.attn_out_bias.transpose();
  return out;
}

MatrixF mlp(const BlockWeights& w, const MatrixF& x_norm) {
  MatrixF hidden = matmul(x_norm, w.mlp_in);
  hidden.rowwise() += w.mlp_in_bias.transpose();
  hidden = hidden.unaryExpr([](float v) { return gelu_tanh(v); });
  MatrixF out = matmul(hidden, w.mlp_out);
  out.rowwise() += w.mlp_out_bias.transpose();
  return out;
}

void check_tokens(const ModelBundle& bundle, std::span<const TokenId> tokens) {
  const ModelConfig& c = bundle.config();
  if (tokens.empty()) throw LengthError("forward: empty token sequence");
  if (static_cast<Index>(tokens.size()) > c.max_seq_len) {
    throw LengthError("forward: sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_seq_len " +
                      std::to_string(c.max_seq_len));
  }
  for (TokenId t : tokens) {
    if (t < 0 || t >= c.vocab_size) {
      throw VocabularyError("forward: token id " + std::to_string(t) + " outside vocabulary of " +
                            std::to_string(c.vocab_size));
    }
  }
}

}  // namespace

SequenceStates forward_sequence(const ModelBundle& bundle, std::span<const TokenId> tokens) {
  check_tokens(bundle, tokens);
  const ModelConfig& c = bundle.config();
  const Index n = static_cast<Index>(tokens.size());

  MatrixF x(n, c.d_model);
  for (Index i = 0; i < n; ++i) {
    x.row(i) = bundle.token_embedding().row(tokens[i]) + bundle.position_embedding().row(i);
  }
  SequenceStates out;
  out.states.reserve(static_cast<std::size_t>(c.n_layers + 1));
  out.states.push_back(x);
  for (const BlockWeights& w : bundle.blocks()) {
    x += attention(w, layer_norm_rows(x, w.ln1_gain, w.ln1_bias, c.layernorm_eps), c.n_heads);
    x += mlp(w, layer_norm_rows(x, w.ln2_gain, w.ln2_bias, c.layernorm_eps));
    require_finite(x, "residual stream");
    out.states.push_back(x);
  }
  return out;
}

VectorF model_head(const ModelBundle& bundle, const VectorF& h) {
  const VectorF normed =
      layer_norm(h, bundle.final_norm_gain(), bundle.final_norm_bias(), bundle.config().layernorm_eps);
  VectorF logits = bundle.unembedding() * normed;
  require_finite(logits, "logits");
  return logits;
}

HiddenTrace forward(const ModelBundle& bundle, std::span<const TokenId> tokens, Index probe_position) {
  check_tokens(bundle, tokens);
  if (probe_position < 0 || probe_position >= static_cast<Index>(tokens.size())) {
    throw IndexError("forward: probe position " + std::to_string(probe_position) + " outside sequence of " +
                     std::to_string(tokens.size()));
  }
  // Causal model: nothing after the probe position can influence it.
  const SequenceStates seq = forward_sequence(bundle, tokens.first(static_cast<std::size_t>(probe_position + 1)));
  HiddenTrace trace;
  trace.probed_position = probe_position;
  trace.states.reserve(seq.states.size());
  for (const MatrixF& s : seq.states) trace.states.push_back(s.row(probe_position).transpose());
  trace.final_logits = model_head(bundle, trace.states.back());
  return trace;
}

TokenId argmax_lowest(const VectorF& logits) {
  if (logits.size() == 0) throw ArgumentError("argmax of empty logits");
  Index best = 0;
  for (Index i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

TokenId greedy_next_token(const ModelBundle& bundle, std::span<const TokenId> tokens) {
  check_tokens(bundle, tokens);
  return argmax_lowest(forward(bundle, tokens, static_cast<Index>(tokens.size()) - 1).final_logits);
}

}  // namespace lensdyn
