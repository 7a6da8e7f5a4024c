// One PASS/FAIL line per acceptance criterion. Exit status is non-zero if any fails.

#include <chrono>
#include <cstdio>
#include <functional>

#include "../checks.hpp"
#include "lensdyn/mcq.hpp"
#include "lensdyn/pipeline.hpp"
#include "lensdyn/stats.hpp"

using namespace lensdyn;
using namespace testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

char buf[512];

template <class... Args>
std::string fmt(const char* f, Args... args) {
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int failures = 0;

void criterion(const char* name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = secs < budget_s;
  const bool pass = o.pass && in_time;
  if (!pass) ++failures;
  std::printf("%s  %-28s %7.2fs (budget %.0fs)  %s%s\n", pass ? "PASS" : "FAIL", name, secs, budget_s,
              o.detail.c_str(), in_time ? "" : "  [over time budget]");
  std::fflush(stdout);
}

Outcome pd_oracle() {
  const PdOracleReport r = pd_oracle_sweep();
  return {r.mismatches == 0 && r.checked == 1024 + 10000,
          fmt("%zu paths, %zu mismatches", r.checked, r.mismatches)};
}

Outcome identity_reduction() {
  const auto model = random_model(small_config(32, 4), 2024);
  const LensStack logit = LensStack::logit(model);
  const LensStack zero = LensStack::zero_tuned(model);
  std::size_t differing = 0;
  const auto traces = random_traces(*model, 100, 99);
  for (const auto& t : traces) {
    for (Index l = 0; l <= 4; ++l) differing += decode_layer(zero, t, l) != decode_layer(logit, t, l);
  }
  return {differing == 0 && traces.size() == 100, fmt("100 traces x 5 layers, %zu differ", differing)};
}

Outcome gradient_check() {
  const GradientCheck g = translator_gradient_check();
  return {g.weight_rel_error < 1e-3 && g.bias_rel_error < 1e-3,
          fmt("rel error A %.2e, b %.2e (d_model 8)", g.weight_rel_error, g.bias_rel_error)};
}

Outcome training_efficacy(const fs::path& work) {
  const auto model = toy_model();
  const auto corpus = model->tokenizer().encode(slurp(toy_dir() / "corpus_train.txt"));
  const auto heldout = model->tokenizer().encode(slurp(toy_dir() / "corpus_heldout.txt"));
  LensTrainConfig cfg;
  cfg.steps = 200;
  const LensTrainResult r = train_tuned_lens(model, corpus, cfg);
  save_lens(r.stack, work / "lens.safetensors");
  const auto tuned = evaluate_lens_kl(r.stack, heldout, cfg.sequence_length);
  const auto logit = evaluate_lens_kl(LensStack::logit(model), heldout, cfg.sequence_length);
  std::size_t better = 0;
  std::string per_layer;
  for (std::size_t l = 0; l < tuned.size(); ++l) {
    better += tuned[l] <= logit[l];
    per_layer += fmt(" L%zu %.3f/%.3f", l, tuned[l], logit[l]);
  }
  // Smoothed loss: means of consecutive 10-step blocks, each strictly below the previous.
  constexpr std::size_t kBlock = 10;
  std::vector<double> blocks;
  for (std::size_t s = 0; s + kBlock <= r.total_loss.size(); s += kBlock) {
    double m = 0;
    for (std::size_t i = s; i < s + kBlock; ++i) m += r.total_loss[i];
    blocks.push_back(m / kBlock);
  }
  bool decreasing = blocks.size() == 20;
  for (std::size_t i = 1; i < blocks.size(); ++i) decreasing = decreasing && blocks[i] < blocks[i - 1];
  const double frac = static_cast<double>(better) / static_cast<double>(tuned.size());
  return {frac >= 0.7 && decreasing,
          fmt("tuned<=logit on %zu/%zu layers, smoothed loss %.3f -> %.3f %s;", better, tuned.size(), blocks.front(),
              blocks.back(), decreasing ? "strictly decreasing" : "NOT strictly decreasing") +
              " held-out KL tuned/logit" + per_layer};
}

Outcome stats_oracles() {
  const auto cases = nlohmann::json::parse(slurp(fixtures() / "stats" / "pearson_oracles.json"));
  double worst = 0;
  for (const auto& c : cases) {
    const auto xs = c.at("xs").get<std::vector<double>>();
    const auto ys = c.at("ys").get<std::vector<double>>();
    const CorrelationResult r = pearson(xs, ys);
    worst = std::max({worst, std::abs(r.r - std::stod(c.at("r").get<std::string>())),
                      std::abs(r.standard_error - std::stod(c.at("se").get<std::string>())),
                      std::abs(r.p_value - std::stod(c.at("p").get<std::string>()))});
  }
  auto answered = [](bool ok) {
    AnswerOutcome o;
    o.sensical = true;
    o.predicted_label = 'A';
    o.correct = ok;
    return o;
  };
  const double k_perfect = cohens_kappa(std::vector<AnswerOutcome>(4, answered(true)), std::vector<int>(4, 4)).kappa;
  const double k_half = cohens_kappa(std::vector<AnswerOutcome>{answered(true), answered(false)}, std::vector<int>{4, 4}).kappa;
  std::vector<double> xs;
  std::vector<double> ys;
  for (int i = 0; i < 102; ++i) {
    xs.push_back(i % 2);
    ys.push_back((i / 2) % 2);
  }
  const CorrelationResult zero = pearson(xs, ys);
  const bool ok = cases.size() == 20 && worst < 1e-9 && k_perfect == 1.0 && std::abs(k_half - 1.0 / 3.0) < 1e-12 &&
                  zero.r == 0.0 && zero.standard_error == 0.1;
  return {ok, fmt("20 cases max abs err %.2e; kappa %.15g and %.15g; SE(r=0,n=102) = %.17g", worst, k_perfect, k_half,
                  zero.standard_error)};
}

Outcome table_format() {
  const auto a = format_correlation({0.192, 0.015, 1e-3, 3909});
  const auto b = format_correlation({0.428, 0.012, 1e-30, 4996});
  const auto c = format_correlation({0.010, 0.012, 0.5, 7479});
  const bool ok = a.text == "0.192*(0.015)" && !a.bold && b.text == "0.428*(0.012)" && b.bold &&
                  c.text == "0.010(0.012)" && !c.bold;
  return {ok, a.text + (a.bold ? " bold" : "") + ", " + b.text + (b.bold ? " bold" : "") + ", " + c.text +
                  (c.bold ? " bold" : "")};
}

Outcome prompt_golden() {
  const auto qs = load_dataset(fixtures() / "mcq" / "mesophiles.jsonl");
  const std::string golden = slurp(fixtures() / "mcq" / "mesophiles_prompt.txt");
  const PromptRecord r = render_prompt(qs.at(0), Tokenizer::byte_level());
  return {r.text == golden, fmt("%zu bytes rendered, %zu golden", r.text.size(), golden.size())};
}

std::string strip_timestamps(const fs::path& p) {
  auto j = nlohmann::ordered_json::parse(slurp(p));
  j["provenance"].erase("started_at");
  j["provenance"].erase("finished_at");
  return j.dump();
}

std::string analyze_cmd(const fs::path& out, int workers, const std::string& lens) {
  return "'" + cli_path().string() + "' analyze --model '" + (toy_dir() / "model.safetensors").string() +
         "' --model-config '" + (toy_dir() / "model.json").string() + "' --dataset toy='" +
         (toy_dir() / "questions.jsonl").string() + "' --lens '" + lens + "' --workers " + std::to_string(workers) +
         " --out '" + out.string() + "'";
}

Outcome end_to_end(const fs::path& work) {
  bool identical = true;
  const std::string tuned = (work / "lens.safetensors").string();
  for (const auto& [tag, lens] : {std::pair<std::string, std::string>{"", "logit"}, {"tuned_", tuned}}) {
    const int rc1 = run_command(analyze_cmd(work / (tag + "w1"), 1, lens));
    const int rc8 = run_command(analyze_cmd(work / (tag + "w8"), 8, lens));
    if (rc1 != 0 || rc8 != 0) return {false, fmt("analyze --lens %s exit codes %d and %d", lens.c_str(), rc1, rc8)};
    identical = identical && strip_timestamps(work / (tag + "w1") / "report.json") ==
                                 strip_timestamps(work / (tag + "w8") / "report.json");
  }

  RunConfig cfg;
  cfg.model_path = toy_dir() / "model.safetensors";
  cfg.model_config_path = toy_dir() / "model.json";
  cfg.datasets = {{"toy", toy_dir() / "questions.jsonl"}};
  cfg.out_dir = work / "inproc";
  cfg.workers = 8;
  const RunReport rep = run_analysis(cfg);
  const DatasetReport& ds = rep.datasets.at(0);
  double complement = 0;
  for (const auto& r : ds.results()) {
    const VectorD total = (r.top_trajectory + r.condensed_trajectory).cast<double>();
    complement = std::max(complement, (total.array() - 1.0).abs().maxCoeff());
  }
  auto pct_sum_error = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0;
    for (double x : v) s += x;
    return std::abs(s - 100.0);
  };
  const double pd_err = std::max(pct_sum_error(ds.pd_hist->pct_correct), pct_sum_error(ds.pd_hist->pct_incorrect));
  const bool ok = identical && ds.questions.size() == 40 && complement <= 1e-6 && pd_err <= 0.01;
  return {ok, fmt("report.json %s; %zu sensical of 40; max |top+cond-1| %.1e; pd_hist sum error %.1e",
                  identical ? "byte-identical, 1 vs 8 workers, logit and tuned lens" : "DIFFERS", ds.n_sensical, complement, pd_err)};
}

Outcome head_consistency(const fs::path& work) {
  double worst = 0;
  std::size_t traces = 0;
  const auto model = toy_model();
  std::vector<LensStack> stacks = {LensStack::logit(model)};
  if (fs::exists(work / "lens.safetensors")) stacks.push_back(load_lens(work / "lens.safetensors", model));
  for (const auto& stack : stacks) {
    for (const auto& q : load_dataset(toy_dir() / "questions.jsonl")) {
      const PromptRecord p = render_prompt(q, model->tokenizer());
      const HiddenTrace t = forward(*model, p.tokens, p.probe_position);
      worst = std::max(worst, static_cast<double>((decode_layer(stack, t, stack.n_layers()) - t.final_logits)
                                                      .cwiseAbs()
                                                      .maxCoeff()));
      ++traces;
    }
  }
  for (const char* run : {"w1", "w8", "tuned_w1", "tuned_w8"}) {
    const auto j = nlohmann::json::parse(slurp(work / run / "report.json"));
    worst = std::max(worst, j.at("datasets").at(0).at("head_consistency_max_abs").get<double>());
  }
  return {worst <= 1e-5 && stacks.size() == 2,
          fmt("%zu traces over logit and trained tuned lens plus four analyze runs, max abs %.2e", traces, worst)};
}

}  // namespace

int main() {
  const fs::path work = scratch_dir("acceptance");
  criterion("pd-oracle-equivalence", 5, pd_oracle);
  criterion("lens-identity-reduction", 5, identity_reduction);
  criterion("gradient-check", 30, gradient_check);
  criterion("tuned-lens-training-efficacy", 300, [&] { return training_efficacy(work); });
  criterion("statistics-oracles", 5, stats_oracles);
  criterion("table-format-fidelity", 1, table_format);
  criterion("prompt-golden", 1, prompt_golden);
  criterion("end-to-end-determinism", 120, [&] { return end_to_end(work); });
  criterion("head-consistency", 60, [&] { return head_consistency(work); });
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
