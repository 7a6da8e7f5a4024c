#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "lensdyn/pipeline.hpp"

namespace fs = std::filesystem;
using namespace lensdyn;

namespace {

fs::path default_config_path(const fs::path& model) {
  fs::path p = model;
  return p.replace_extension(".json");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise lens analysis of multiple-choice answering"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::string model_path;
  std::string model_config;
  std::string corpus;
  std::string heldout;
  std::string out;
  std::string preset;
  int workers = 1;
  std::uint64_t seed = 0;
  LensTrainConfig train;

  auto* train_cmd = app.add_subcommand("train-lens", "Train tuned-lens translators for a model");
  train_cmd->add_option("--model", model_path, "Model tensor archive")->required();
  train_cmd->add_option("--model-config", model_config, "Model config JSON (default: archive path with .json)");
  train_cmd->add_option("--corpus", corpus, "Training text corpus")->required();
  train_cmd->add_option("--heldout", heldout, "Held-out corpus for the KL comparison");
  train_cmd->add_option("--out", out, "Output directory")->required();
  train_cmd->add_option("--preset", preset, "Hyperparameter preset")->check(CLI::IsMember({"full-scale"}));
  auto* steps_opt = train_cmd->add_option("--steps", train.steps, "Optimizer steps");
  auto* lr_opt = train_cmd->add_option("--lr", train.learning_rate, "Learning rate");
  auto* wd_opt = train_cmd->add_option("--weight-decay", train.weight_decay, "Decoupled weight decay");
  auto* tps_opt = train_cmd->add_option("--tokens-per-step", train.tokens_per_step, "Tokens per optimizer step");
  auto* seq_opt = train_cmd->add_option("--seq-len", train.sequence_length, "Window length");
  train_cmd->add_option("--seed", seed, "Shuffle seed");
  train_cmd->add_option("--workers", workers, "Worker threads");

  std::string lens = "logit";
  std::vector<std::string> datasets;
  std::string model_name;
  std::string condensed = "sum";
  auto* analyze_cmd = app.add_subcommand("analyze", "Run the per-dataset analysis");
  analyze_cmd->add_option("--model", model_path, "Model tensor archive")->required();
  analyze_cmd->add_option("--model-config", model_config, "Model config JSON (default: archive path with .json)");
  analyze_cmd->add_option("--lens", lens, "'logit' or a lens archive");
  analyze_cmd->add_option("--dataset", datasets, "NAME=PATH, repeatable")->required();
  analyze_cmd->add_option("--out", out, "Output directory")->required();
  analyze_cmd->add_option("--model-name", model_name, "Column name used by report");
  analyze_cmd->add_option("--seed", seed, "Seed");
  analyze_cmd->add_option("--workers", workers, "Worker threads");
  analyze_cmd->add_option("--condensed", condensed, "Condensed trajectory mode")->check(CLI::IsMember({"sum", "mean"}));

  std::vector<std::string> runs;
  auto* report_cmd = app.add_subcommand("report", "Merge analyze runs into cross-model tables");
  report_cmd->add_option("runs", runs, "Run directories")->required();
  report_cmd->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) {
      TrainLensJob job;
      if (!preset.empty()) {
        LensTrainConfig base = LensTrainConfig::full_scale();
        if (*steps_opt) base.steps = train.steps;
        if (*lr_opt) base.learning_rate = train.learning_rate;
        if (*wd_opt) base.weight_decay = train.weight_decay;
        if (*tps_opt) base.tokens_per_step = train.tokens_per_step;
        if (*seq_opt) base.sequence_length = train.sequence_length;
        train = base;
      }
      train.seed = seed;
      train.workers = workers;
      job.model_path = model_path;
      job.model_config_path = model_config.empty() ? default_config_path(model_path) : fs::path(model_config);
      job.corpus_path = corpus;
      if (!heldout.empty()) job.heldout_path = heldout;
      job.out_dir = out;
      job.train = train;
      const TrainLensOutcome res = run_train_lens(job);
      for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
      std::printf("lens written to %s (total loss %.6g -> %.6g)\n", res.lens_path.c_str(), res.initial_total_loss,
                  res.final_total_loss);
      return 0;
    }
    if (*analyze_cmd) {
      RunConfig cfg;
      cfg.model_path = model_path;
      cfg.model_config_path = model_config.empty() ? default_config_path(model_path) : fs::path(model_config);
      cfg.lens = lens;
      for (const auto& d : datasets) cfg.datasets.push_back(parse_dataset_spec(d));
      cfg.out_dir = out;
      if (!model_name.empty()) cfg.model_name = model_name;
      cfg.seed = seed;
      cfg.workers = workers;
      cfg.condensed = parse_condensed_mode(condensed);
      const RunReport report = run_analysis(cfg);
      write_run_outputs(report, cfg.out_dir);
      for (const auto& ds : report.datasets) {
        if (ds.skip_reason) {
          std::cerr << "dataset " << ds.name << " skipped: " << *ds.skip_reason << "\n";
        } else {
          std::printf("%s: %zu sensical, %zu non-sensical, %zu errors\n", ds.name.c_str(), ds.n_sensical,
                      ds.n_nonsensical, ds.n_errors);
        }
      }
      return report.any_skipped() ? 1 : 0;
    }
    std::vector<fs::path> dirs(runs.begin(), runs.end());
    run_report(dirs, out);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
