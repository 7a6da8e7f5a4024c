#pragma once

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>

#include "json.hpp"
#include "lensdyn/model.hpp"
#include "lensdyn/tensor_archive.hpp"

namespace testing {

namespace fs = std::filesystem;
using namespace lensdyn;

inline fs::path fixtures() { return LENSDYN_FIXTURES; }
inline fs::path toy_dir() { return fixtures() / "toy"; }
inline fs::path cli_path() { return LENSDYN_CLI; }

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("lensdyn_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline ModelConfig small_config(Index d = 32, Index layers = 4, Index vocab = 256, Index heads = 4) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = d;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_mlp = 4 * d;
  c.max_seq_len = 64;
  return c;
}

inline std::map<std::string, std::vector<std::int64_t>> tensor_shapes(const ModelConfig& c) {
  const std::int64_t d = c.d_model;
  std::map<std::string, std::vector<std::int64_t>> shapes;
  shapes["wte.weight"] = {c.vocab_size, d};
  shapes["wpe.weight"] = {c.max_seq_len, d};
  for (Index i = 0; i < c.n_layers; ++i) {
    const std::string p = "h." + std::to_string(i) + ".";
    shapes[p + "ln_1.weight"] = shapes[p + "ln_1.bias"] = {d};
    shapes[p + "ln_2.weight"] = shapes[p + "ln_2.bias"] = {d};
    shapes[p + "attn.c_attn.weight"] = {d, 3 * d};
    shapes[p + "attn.c_attn.bias"] = {3 * d};
    shapes[p + "attn.c_proj.weight"] = {d, d};
    shapes[p + "attn.c_proj.bias"] = {d};
    shapes[p + "mlp.c_fc.weight"] = {d, c.d_mlp};
    shapes[p + "mlp.c_fc.bias"] = {c.d_mlp};
    shapes[p + "mlp.c_proj.weight"] = {c.d_mlp, d};
    shapes[p + "mlp.c_proj.bias"] = {d};
  }
  shapes["ln_f.weight"] = shapes["ln_f.bias"] = {d};
  if (!c.tied_unembedding) shapes["lm_head.weight"] = {c.vocab_size, d};
  return shapes;
}

/// Gaussian weights (std `scale`); layer-norm gains near 1. With `zero_blocks`
/// every block weight and bias is 0 so each block is the identity on the residual.
inline std::map<std::string, RawTensor> random_tensors(const ModelConfig& c, std::uint64_t seed, float scale = 0.2f,
                                                       bool zero_blocks = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::map<std::string, RawTensor> out;
  for (const auto& [name, shape] : tensor_shapes(c)) {
    RawTensor t;
    t.shape = shape;
    t.data.resize(static_cast<std::size_t>(t.element_count()));
    const bool is_gain = name.find("ln_") != std::string::npos && name.ends_with(".weight");
    const bool in_block = name.starts_with("h.");
    for (auto& v : t.data) {
      if (zero_blocks && in_block) {
        v = 0.0f;
      } else if (is_gain) {
        v = 1.0f + 0.1f * normal(rng);
      } else {
        v = scale * normal(rng);
      }
    }
    out[name] = std::move(t);
  }
  return out;
}

inline std::shared_ptr<const ModelBundle> bundle_from(const ModelConfig& c, const std::map<std::string, RawTensor>& t) {
  const std::string bytes = serialize_archive(t);
  const TensorArchive archive =
      parse_archive(std::span(reinterpret_cast<const std::byte*>(bytes.data()), bytes.size()));
  return std::make_shared<const ModelBundle>(ModelBundle::from_archive(c, archive));
}

inline std::shared_ptr<const ModelBundle> random_model(const ModelConfig& c, std::uint64_t seed, float scale = 0.2f) {
  return bundle_from(c, random_tensors(c, seed, scale));
}

inline std::shared_ptr<const ModelBundle> toy_model() {
  return load_model(toy_dir() / "model.safetensors", toy_dir() / "model.json");
}

struct GoldenPrompt {
  std::string question_id;
  std::string text;
  std::vector<TokenId> tokens;
  Index probe_position = 0;
  TokenId greedy_token = 0;
  MatrixF states;  // [(L+1) x d]
  VectorF final_logits;
  VectorF logit_lens_prev;
};

inline std::vector<GoldenPrompt> golden_prompts() {
  const auto manifest = nlohmann::json::parse(slurp(toy_dir() / "golden_manifest.json"));
  std::vector<GoldenPrompt> out;
  for (const auto& p : manifest.at("prompts")) {
    GoldenPrompt g;
    g.question_id = p.at("question_id").get<std::string>();
    g.text = p.at("text").get<std::string>();
    g.tokens = p.at("tokens").get<std::vector<TokenId>>();
    g.probe_position = p.at("probe_position").get<Index>();
    g.greedy_token = p.at("greedy_token").get<TokenId>();
    const TensorArchive a = read_archive(toy_dir() / p.at("file").get<std::string>());
    const RawTensor& s = a.at("states");
    g.states = to_matrix(s, s.shape.at(0), s.shape.at(1), "states");
    g.final_logits = to_vector(a.at("final_logits"), a.at("final_logits").element_count(), "final_logits");
    g.logit_lens_prev = to_vector(a.at("logit_lens_prev"), a.at("logit_lens_prev").element_count(), "logit_lens_prev");
    out.push_back(std::move(g));
  }
  return out;
}

inline int run_command(const std::string& cmd) {
  const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

}  // namespace testing
