#pragma once

// End-to-end runs: lens training, per-dataset analysis and cross-run tables.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lensdyn/dynamics.hpp"
#include "lensdyn/lens.hpp"
#include "lensdyn/stats.hpp"

namespace lensdyn {

inline constexpr const char* kVersion = "0.1.0";

/// Bad paths, flags or options; the CLI maps this to exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

struct DatasetSpec {
  std::string name;
  std::filesystem::path path;
};

/// Parses "NAME=PATH".
DatasetSpec parse_dataset_spec(const std::string& arg);

struct RunConfig {
  std::filesystem::path model_path;
  std::filesystem::path model_config_path;
  /// "logit" or a lens archive path.
  std::string lens = "logit";
  std::vector<DatasetSpec> datasets;
  std::filesystem::path out_dir;
  std::optional<std::string> model_name;
  std::uint64_t seed = 0;
  int workers = 1;
  CondensedMode condensed = CondensedMode::sum;

  void validate() const;
  /// Everything that determines the results; worker count and output location excluded.
  nlohmann::ordered_json digest_fields() const;
};

enum class QuestionStatus { result, nonsensical, error };

struct QuestionRecord {
  std::string id;
  QuestionStatus status = QuestionStatus::error;
  std::string message;
  char gold_label = 'A';
  int num_choices = 0;
  std::optional<AnswerOutcome> outcome;
  std::string generated_text;
  std::optional<QuestionResult> result;
  double head_deviation = 0;  // max |decode_layer(L) - final_logits|
};

struct DatasetReport {
  std::string name;
  std::string path;
  std::string digest;
  std::optional<std::string> skip_reason;
  std::vector<QuestionRecord> questions;
  std::size_t n_sensical = 0;
  std::size_t n_nonsensical = 0;
  std::size_t n_errors = 0;
  double head_consistency_max_abs = 0;

  std::optional<KappaResult> kappa;
  std::optional<CorrelationResult> correlation;
  std::optional<std::string> correlation_note;
  std::optional<double> pd_gap;
  std::optional<std::string> pd_gap_note;
  std::optional<TrajectoryAggregate> trajectories;
  std::optional<PdDistribution> pd_hist;

  std::vector<QuestionResult> results() const;
};

struct RunReport {
  std::string model_name;
  std::string model_fingerprint;
  std::string lens_kind;
  std::string lens_path;
  Index n_layers = 0;
  CondensedMode condensed = CondensedMode::sum;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<DatasetReport> datasets;

  std::optional<TrajectoryAggregate> pooled_trajectories;
  std::optional<PdDistribution> pooled_pd_hist;
  std::vector<DatasetPoint> kappa_points;
  std::optional<KappaGapResult> kappa_vs_gap;
  std::optional<std::string> kappa_vs_gap_note;

  std::string started_at;
  std::string finished_at;

  bool any_skipped() const;
};

RunReport run_analysis(const RunConfig& cfg);
nlohmann::ordered_json to_json(const RunReport& report);

/// report.json, trajectories.csv, pd_hist.csv, correlations.csv, kappa_scatter.csv
/// and per-dataset questions/trajectory/pd files under datasets/<name>/.
void write_run_outputs(const RunReport& report, const std::filesystem::path& out_dir);

std::string trajectories_csv(const std::optional<TrajectoryAggregate>& agg, Index n_states);
std::string pd_hist_csv(const std::optional<PdDistribution>& pd, Index n_states);

struct TrainLensJob {
  std::filesystem::path model_path;
  std::filesystem::path model_config_path;
  std::filesystem::path corpus_path;
  std::optional<std::filesystem::path> heldout_path;
  std::filesystem::path out_dir;
  LensTrainConfig train;
};

struct TrainLensOutcome {
  std::filesystem::path lens_path;
  std::filesystem::path curves_path;
  std::vector<std::string> warnings;
  double initial_total_loss = 0;
  double final_total_loss = 0;
};

/// Writes lens.safetensors, loss_curves.json and run.log into out_dir.
TrainLensOutcome run_train_lens(const TrainLensJob& job);

/// Merges completed run directories into correlation_grid.{csv,md}, sensical_grid.csv,
/// kappa_gap_<model>.csv and grids.json under out_dir.
void run_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir);

std::string format_number(double v);

}  // namespace lensdyn
