#pragma once

// Layer-wise answer dynamics: label-restricted distributions per layer,
// top/condensed trajectories, prediction depth and their aggregates.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lensdyn/lens.hpp"
#include "lensdyn/mcq.hpp"

namespace lensdyn {

struct LayerLabelDistribution {
  std::vector<char> labels;
  MatrixF probs;  // [(L+1) x n_labels]

  Index n_states() const { return probs.rows(); }
};

LayerLabelDistribution label_distributions(const LensStack& stack, const HiddenTrace& trace,
                                           const PromptRecord& prompt);

/// How the non-top labels are folded into one curve.
enum class CondensedMode { sum, mean };

const char* to_string(CondensedMode mode);
CondensedMode parse_condensed_mode(const std::string& s);

struct QuestionResult {
  std::string question_id;
  bool correct = false;
  char top_label = 'A';
  VectorF top_trajectory;        // L+1
  VectorF condensed_trajectory;  // L+1
  int prediction_depth = 0;
  std::vector<char> argmax_path;  // L+1
};

/// Index of the largest entry; ties go to the first (alphabetically first label).
Index argmax_first(const Eigen::Ref<const VectorF>& v);

/// Prediction depth: 1 + index of the last change in the path, 0 if it never changes.
template <class T>
int compute_pd(std::span<const T> path) {
  if (path.empty()) throw ArgumentError("compute_pd: empty path");
  for (std::size_t l = path.size() - 1; l > 0; --l) {
    if (path[l - 1] != path[l]) return static_cast<int>(l);
  }
  return 0;
}

QuestionResult question_result(const LayerLabelDistribution& dist, const AnswerOutcome& outcome,
                               CondensedMode mode = CondensedMode::sum);

struct GroupTrajectory {
  std::size_t count = 0;
  VectorD top_mean, top_se, cond_mean, cond_se;
};

struct TrajectoryAggregate {
  Index n_states = 0;
  std::optional<GroupTrajectory> correct;
  std::optional<GroupTrajectory> incorrect;
};

/// Count / sum / sum-of-squares accumulator; merge is associative and commutative.
class TrajectoryAccumulator {
 public:
  explicit TrajectoryAccumulator(Index n_states = 0);
  void add(const QuestionResult& r);
  void merge(const TrajectoryAccumulator& other);
  TrajectoryAggregate finish() const;

 private:
  struct Moments {
    std::size_t count = 0;
    VectorD top_sum, top_sq, cond_sum, cond_sq;
  };
  void init(Index n_states);
  static void absorb(Moments& m, const VectorF& top, const VectorF& cond);
  static GroupTrajectory finish_group(const Moments& m);

  Index n_states_ = 0;
  Moments correct_, incorrect_;
};

TrajectoryAggregate aggregate_trajectories(std::span<const QuestionResult> results);

struct PdDistribution {
  Index n_states = 0;
  std::size_t n_correct = 0;
  std::size_t n_incorrect = 0;
  std::vector<double> pct_correct;    // empty when the group is empty
  std::vector<double> pct_incorrect;
};

PdDistribution pd_distribution(std::span<const QuestionResult> results);

}  // namespace lensdyn
