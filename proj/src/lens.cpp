#include "lensdyn/lens.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>

#include "lensdyn/parallel.hpp"

namespace lensdyn {

const char* to_string(LensKind kind) { return kind == LensKind::logit ? "logit" : "tuned"; }

LensStack::LensStack(LensKind kind, std::shared_ptr<const ModelBundle> model, std::vector<Translator> translators)
    : kind_(kind), model_(std::move(model)), translators_(std::move(translators)) {
  if (!model_) throw ArgumentError("lens stack needs a model");
  const Index d = model_->config().d_model;
  if (kind_ == LensKind::logit) {
    if (!translators_.empty()) throw ArgumentError("logit lens carries no translators");
    return;
  }
  if (static_cast<Index>(translators_.size()) != model_->config().n_layers) {
    throw ShapeError("tuned lens needs " + std::to_string(model_->config().n_layers) + " translators, got " +
                     std::to_string(translators_.size()));
  }
  for (std::size_t l = 0; l < translators_.size(); ++l) {
    const Translator& t = translators_[l];
    if (t.weight.rows() != d || t.weight.cols() != d || t.bias.size() != d) {
      throw ShapeError("translator " + std::to_string(l) + " has weight " +
                       shape_string(t.weight.rows(), t.weight.cols()) + " and bias of " +
                       std::to_string(t.bias.size()) + ", expected d_model " + std::to_string(d));
    }
  }
}

LensStack LensStack::logit(std::shared_ptr<const ModelBundle> model) {
  return LensStack(LensKind::logit, std::move(model), {});
}

LensStack LensStack::zero_tuned(std::shared_ptr<const ModelBundle> model) {
  const Index d = model->config().d_model;
  std::vector<Translator> ts(static_cast<std::size_t>(model->config().n_layers),
                             Translator{MatrixF::Zero(d, d), VectorF::Zero(d)});
  return LensStack(LensKind::tuned, std::move(model), std::move(ts));
}

LensStack LensStack::tuned(std::shared_ptr<const ModelBundle> model, std::vector<Translator> translators) {
  return LensStack(LensKind::tuned, std::move(model), std::move(translators));
}

VectorF decode_layer(const LensStack& stack, const HiddenTrace& trace, Index layer) {
  const Index n_layers = stack.n_layers();
  if (static_cast<Index>(trace.states.size()) != n_layers + 1) {
    throw ArgumentError("decode_layer: trace has " + std::to_string(trace.states.size()) + " states, model has " +
                        std::to_string(n_layers + 1));
  }
  if (layer < 0 || layer > n_layers) {
    throw IndexError("decode_layer: layer " + std::to_string(layer) + " outside 0.." + std::to_string(n_layers));
  }
  const VectorF& h = trace.states[static_cast<std::size_t>(layer)];
  if (layer == n_layers || stack.kind() == LensKind::logit) return model_head(stack.model(), h);
  const Translator& t = stack.translators()[static_cast<std::size_t>(layer)];
  return model_head(stack.model(), translate(t.weight, t.bias, h));
}

LensTrainConfig LensTrainConfig::full_scale() {
  LensTrainConfig c;
  c.learning_rate = 1e-3;
  c.steps = 1000;
  c.weight_decay = 0.01;
  c.beta1 = 0.9;
  c.tokens_per_step = Index(1) << 18;
  return c;
}

void LensTrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ArgumentError("lens training: learning_rate must be positive");
  if (steps < 0) throw ArgumentError("lens training: steps must be non-negative");
  if (weight_decay < 0) throw ArgumentError("lens training: weight_decay must be non-negative");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) throw ArgumentError("lens training: betas must lie in (0,1)");
  if (!(epsilon > 0)) throw ArgumentError("lens training: epsilon must be positive");
  if (sequence_length <= 0 || tokens_per_step <= 0) throw ArgumentError("lens training: sizes must be positive");
  if (tokens_per_step % sequence_length != 0) {
    throw ArgumentError("lens training: tokens_per_step " + std::to_string(tokens_per_step) +
                        " is not a multiple of sequence_length " + std::to_string(sequence_length));
  }
}

namespace {

constexpr Index kChunkRows = 1024;

MatrixF head_probabilities(const LensHead<float>& head, const MatrixF& states) {
  MatrixF normed = layer_norm_rows(states, head.norm_gain, head.norm_bias, head.eps);
  return softmax_rows<float>(normed * head.unembed.transpose());
}

struct Batch {
  std::vector<MatrixF> layers;  // L+1 stacked [N x d]
};

Batch run_windows(const ModelBundle& model, std::span<const TokenId> corpus, const std::vector<std::size_t>& windows,
                  Index seq_len, int workers) {
  std::vector<SequenceStates> per_window(windows.size());
  parallel_for(windows.size(), workers, [&](std::size_t i) {
    per_window[i] = forward_sequence(model, corpus.subspan(windows[i] * static_cast<std::size_t>(seq_len),
                                                           static_cast<std::size_t>(seq_len)));
  });
  const Index n_states = model.config().n_layers + 1;
  const Index rows = static_cast<Index>(windows.size()) * seq_len;
  Batch b;
  b.layers.assign(static_cast<std::size_t>(n_states), MatrixF(rows, model.config().d_model));
  for (std::size_t w = 0; w < per_window.size(); ++w) {
    for (Index l = 0; l < n_states; ++l) {
      b.layers[l].middleRows(static_cast<Index>(w) * seq_len, seq_len) = per_window[w].states[l];
    }
  }
  return b;
}

// Per-layer objective sums over the batch, chunked so targets never exceed kChunkRows x vocab.
std::vector<TranslatorObjective<float>> batch_objectives(const LensHead<float>& head,
                                                         const std::vector<Translator>& translators,
                                                         const Batch& batch, bool with_gradient, int workers) {
  const std::size_t n_layers = translators.size();
  const Index rows = batch.layers.back().rows();
  const Index d = head.norm_gain.size();
  std::vector<TranslatorObjective<float>> acc(n_layers);
  for (auto& a : acc) {
    a.weight_grad = MatrixF::Zero(d, d);
    a.bias_grad = VectorF::Zero(d);
  }
  for (Index start = 0; start < rows; start += kChunkRows) {
    const Index len = std::min(kChunkRows, rows - start);
    const MatrixF targets = head_probabilities(head, batch.layers.back().middleRows(start, len));
    parallel_for(n_layers, workers, [&](std::size_t l) {
      const MatrixF states = batch.layers[l].middleRows(start, len);
      auto part = translator_objective(head, translators[l].weight, translators[l].bias, states, targets, with_gradient);
      acc[l].loss_sum += part.loss_sum;
      if (with_gradient) {
        acc[l].weight_grad += part.weight_grad;
        acc[l].bias_grad += part.bias_grad;
      }
    });
  }
  return acc;
}

std::vector<Translator> working_translators(const LensStack& stack) {
  if (stack.kind() == LensKind::tuned) return stack.translators();
  const Index d = stack.model().config().d_model;
  return std::vector<Translator>(static_cast<std::size_t>(stack.n_layers()), Translator{MatrixF::Zero(d, d), VectorF::Zero(d)});
}

}  // namespace

LensTrainResult train_tuned_lens(std::shared_ptr<const ModelBundle> model, std::span<const TokenId> corpus,
                                 const LensTrainConfig& cfg) {
  cfg.validate();
  if (corpus.empty()) throw ArgumentError("lens training: empty corpus");
  const ModelConfig& mc = model->config();
  if (cfg.sequence_length > mc.max_seq_len) {
    throw LengthError("lens training: sequence_length " + std::to_string(cfg.sequence_length) +
                      " exceeds max_seq_len " + std::to_string(mc.max_seq_len));
  }
  const std::size_t seq_len = static_cast<std::size_t>(cfg.sequence_length);
  const std::size_t n_windows = corpus.size() / seq_len;
  if (n_windows == 0) {
    throw ArgumentError("lens training: corpus of " + std::to_string(corpus.size()) +
                        " tokens is shorter than one sequence of " + std::to_string(seq_len));
  }
  const std::size_t per_step = static_cast<std::size_t>(cfg.tokens_per_step / cfg.sequence_length);

  LensTrainResult result{LensStack::zero_tuned(model), {}, {}, false, 0};
  std::vector<Translator> translators = result.stack.translators();
  std::vector<AdamState<float>> weight_state;
  std::vector<AdamState<float>> bias_state;
  for (std::size_t l = 0; l < translators.size(); ++l) {
    weight_state.push_back(make_adam_state<float>(mc.d_model, mc.d_model, cfg.adam()));
    bias_state.push_back(make_adam_state<float>(mc.d_model, 1, cfg.adam()));
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n_windows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  const LensHead<float> head = model->head();
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> windows;
    windows.reserve(per_step);
    while (windows.size() < per_step) {
      if (cursor == n_windows) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
        result.cycled_corpus = true;
      }
      windows.push_back(order[cursor++]);
    }
    const Batch batch = run_windows(*model, corpus, windows, cfg.sequence_length, cfg.workers);
    const float rows = static_cast<float>(batch.layers.back().rows());
    result.tokens_seen += static_cast<std::size_t>(rows);

    auto objectives = batch_objectives(head, translators, batch, true, cfg.workers);
    std::vector<double> losses(translators.size());
    double total = 0;
    for (std::size_t l = 0; l < translators.size(); ++l) {
      const double loss = static_cast<double>(objectives[l].loss_sum) / rows;
      if (!std::isfinite(loss) || !objectives[l].weight_grad.allFinite() || !objectives[l].bias_grad.allFinite()) {
        throw NumericError("lens training: non-finite loss or gradient at layer " + std::to_string(l) + ", step " +
                           std::to_string(step));
      }
      losses[l] = loss;
      total += loss;
      adam_step(translators[l].weight, objectives[l].weight_grad / rows, weight_state[l]);
      adam_step(translators[l].bias, objectives[l].bias_grad / rows, bias_state[l]);
    }
    result.layer_loss.push_back(std::move(losses));
    result.total_loss.push_back(total);
  }
  result.stack = LensStack::tuned(model, std::move(translators));
  return result;
}

std::vector<double> evaluate_lens_kl(const LensStack& stack, std::span<const TokenId> corpus, Index sequence_length,
                                     int workers) {
  if (sequence_length <= 0) throw ArgumentError("evaluate_lens_kl: sequence_length must be positive");
  const std::size_t n_windows = corpus.size() / static_cast<std::size_t>(sequence_length);
  if (n_windows == 0) throw ArgumentError("evaluate_lens_kl: corpus shorter than one sequence");
  const std::vector<Translator> translators = working_translators(stack);
  const LensHead<float> head = stack.model().head();

  std::vector<double> sums(translators.size(), 0.0);
  double rows = 0;
  // One window at a time keeps memory flat; sums are accumulated in window order.
  for (std::size_t w = 0; w < n_windows; ++w) {
    const Batch batch = run_windows(stack.model(), corpus, {w}, sequence_length, 1);
    auto objectives = batch_objectives(head, translators, batch, false, workers);
    for (std::size_t l = 0; l < sums.size(); ++l) sums[l] += objectives[l].loss_sum;
    rows += static_cast<double>(sequence_length);
  }
  for (double& s : sums) s /= rows;
  return sums;
}

void save_lens(const LensStack& stack, const std::filesystem::path& path) {
  const ModelConfig& c = stack.model().config();
  std::map<std::string, RawTensor> tensors;
  for (std::size_t l = 0; l < stack.translators().size(); ++l) {
    tensors["layers." + std::to_string(l) + ".weight"] = to_raw(stack.translators()[l].weight);
    tensors["layers." + std::to_string(l) + ".bias"] = to_raw(stack.translators()[l].bias);
  }
  const std::map<std::string, std::string> metadata = {
      {"lens.kind", to_string(stack.kind())},
      {"lens.model_fingerprint", stack.model().fingerprint()},
      {"lens.n_layers", std::to_string(c.n_layers)},
      {"lens.d_model", std::to_string(c.d_model)},
  };
  write_archive(path, tensors, metadata);
}

LensStack load_lens(const std::filesystem::path& path, std::shared_ptr<const ModelBundle> model) {
  const TensorArchive archive = read_archive(path);
  auto meta = [&](const std::string& key) {
    auto it = archive.metadata.find(key);
    if (it == archive.metadata.end()) throw FormatError("lens archive lacks metadata key " + key, 8);
    return it->second;
  };
  const ModelConfig& c = model->config();
  if (meta("lens.d_model") != std::to_string(c.d_model) || meta("lens.n_layers") != std::to_string(c.n_layers)) {
    throw FingerprintError("lens was built for d_model " + meta("lens.d_model") + " with " + meta("lens.n_layers") +
                           " layers, model has d_model " + std::to_string(c.d_model) + " with " +
                           std::to_string(c.n_layers));
  }
  if (meta("lens.model_fingerprint") != model->fingerprint()) {
    throw FingerprintError("lens fingerprint " + meta("lens.model_fingerprint") + " does not match model " +
                           model->fingerprint());
  }
  const std::string kind = meta("lens.kind");
  if (kind == "logit") return LensStack::logit(std::move(model));
  if (kind != "tuned") throw FormatError("unknown lens kind '" + kind + "'", 8);
  std::vector<Translator> ts;
  for (Index l = 0; l < c.n_layers; ++l) {
    const std::string w = "layers." + std::to_string(l) + ".weight";
    const std::string b = "layers." + std::to_string(l) + ".bias";
    ts.push_back({to_matrix(archive.at(w), c.d_model, c.d_model, w), to_vector(archive.at(b), c.d_model, b)});
  }
  return LensStack::tuned(std::move(model), std::move(ts));
}

}  // namespace lensdyn
