#include "lensdyn/dynamics.hpp"

#include <cmath>

namespace lensdyn {

LayerLabelDistribution label_distributions(const LensStack& stack, const HiddenTrace& trace,
                                           const PromptRecord& prompt) {
  LayerLabelDistribution dist;
  for (const auto& [label, id] : prompt.label_tokens) dist.labels.push_back(label);
  const std::vector<Index> ids = prompt.label_token_indices();
  const Index n_states = stack.n_layers() + 1;
  dist.probs.resize(n_states, static_cast<Index>(ids.size()));
  for (Index l = 0; l < n_states; ++l) {
    dist.probs.row(l) = softmax(decode_layer(stack, trace, l), ids).transpose();
  }
  return dist;
}

const char* to_string(CondensedMode mode) { return mode == CondensedMode::sum ? "sum" : "mean"; }

CondensedMode parse_condensed_mode(const std::string& s) {
  if (s == "sum") return CondensedMode::sum;
  if (s == "mean") return CondensedMode::mean;
  throw ArgumentError("condensed mode must be 'sum' or 'mean', got '" + s + "'");
}

Index argmax_first(const Eigen::Ref<const VectorF>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

QuestionResult question_result(const LayerLabelDistribution& dist, const AnswerOutcome& outcome, CondensedMode mode) {
  if (!outcome.sensical || !outcome.correct) {
    throw PreconditionError("question_result: outcome for '" + outcome.question_id + "' is not sensical");
  }
  const Index n_states = dist.probs.rows();
  const Index k = dist.probs.cols();
  if (n_states == 0 || k < 2) throw ArgumentError("question_result: need at least one layer and two labels");

  QuestionResult r;
  r.question_id = outcome.question_id;
  r.correct = *outcome.correct;
  const Index top = argmax_first(dist.probs.row(n_states - 1).transpose());
  r.top_label = dist.labels[static_cast<std::size_t>(top)];
  r.top_trajectory = dist.probs.col(top);
  r.condensed_trajectory.resize(n_states);
  for (Index l = 0; l < n_states; ++l) {
    float rest = 0;
    for (Index j = 0; j < k; ++j) {
      if (j != top) rest += dist.probs(l, j);
    }
    r.condensed_trajectory[l] = mode == CondensedMode::sum ? rest : rest / static_cast<float>(k - 1);
    r.argmax_path.push_back(dist.labels[static_cast<std::size_t>(argmax_first(dist.probs.row(l).transpose()))]);
  }
  r.prediction_depth = compute_pd(std::span<const char>(r.argmax_path));
  return r;
}

TrajectoryAccumulator::TrajectoryAccumulator(Index n_states) { init(n_states); }

void TrajectoryAccumulator::init(Index n_states) {
  n_states_ = n_states;
  for (Moments* m : {&correct_, &incorrect_}) {
    m->count = 0;
    m->top_sum = m->top_sq = m->cond_sum = m->cond_sq = VectorD::Zero(n_states);
  }
}

void TrajectoryAccumulator::absorb(Moments& m, const VectorF& top, const VectorF& cond) {
  const VectorD t = top.cast<double>();
  const VectorD c = cond.cast<double>();
  m.count += 1;
  m.top_sum += t;
  m.top_sq += t.cwiseAbs2();
  m.cond_sum += c;
  m.cond_sq += c.cwiseAbs2();
}

void TrajectoryAccumulator::add(const QuestionResult& r) {
  const Index n = r.top_trajectory.size();
  if (n_states_ == 0 && correct_.count == 0 && incorrect_.count == 0) init(n);
  if (n != n_states_ || r.condensed_trajectory.size() != n_states_) {
    throw ArgumentError("aggregate_trajectories: question '" + r.question_id + "' has " + std::to_string(n) +
                        " layer states, expected " + std::to_string(n_states_) +
                        " (results from different models cannot be pooled)");
  }
  absorb(r.correct ? correct_ : incorrect_, r.top_trajectory, r.condensed_trajectory);
}

void TrajectoryAccumulator::merge(const TrajectoryAccumulator& other) {
  if (other.correct_.count + other.incorrect_.count == 0) return;
  if (correct_.count + incorrect_.count == 0) {
    *this = other;
    return;
  }
  if (other.n_states_ != n_states_) throw ArgumentError("aggregate_trajectories: mixed layer counts");
  auto fold = [](Moments& a, const Moments& b) {
    a.count += b.count;
    a.top_sum += b.top_sum;
    a.top_sq += b.top_sq;
    a.cond_sum += b.cond_sum;
    a.cond_sq += b.cond_sq;
  };
  fold(correct_, other.correct_);
  fold(incorrect_, other.incorrect_);
}

GroupTrajectory TrajectoryAccumulator::finish_group(const Moments& m) {
  GroupTrajectory g;
  g.count = m.count;
  const double n = static_cast<double>(m.count);
  auto se = [&](const VectorD& sum, const VectorD& sq) -> VectorD {
    if (m.count < 2) return VectorD::Zero(sum.size());
    const VectorD var = ((sq - sum.cwiseAbs2() / n) / (n - 1)).cwiseMax(0.0);
    return (var / n).cwiseSqrt();
  };
  g.top_mean = m.top_sum / n;
  g.cond_mean = m.cond_sum / n;
  g.top_se = se(m.top_sum, m.top_sq);
  g.cond_se = se(m.cond_sum, m.cond_sq);
  return g;
}

TrajectoryAggregate TrajectoryAccumulator::finish() const {
  TrajectoryAggregate a;
  a.n_states = n_states_;
  if (correct_.count) a.correct = finish_group(correct_);
  if (incorrect_.count) a.incorrect = finish_group(incorrect_);
  return a;
}

TrajectoryAggregate aggregate_trajectories(std::span<const QuestionResult> results) {
  TrajectoryAccumulator acc(results.empty() ? 0 : results.front().top_trajectory.size());
  for (const auto& r : results) acc.add(r);
  return acc.finish();
}

PdDistribution pd_distribution(std::span<const QuestionResult> results) {
  if (results.empty()) throw ArgumentError("pd_distribution: no results");
  PdDistribution d;
  d.n_states = results.front().top_trajectory.size();
  std::vector<std::size_t> correct(static_cast<std::size_t>(d.n_states), 0);
  std::vector<std::size_t> incorrect(static_cast<std::size_t>(d.n_states), 0);
  for (const auto& r : results) {
    if (r.top_trajectory.size() != d.n_states) throw ArgumentError("pd_distribution: mixed layer counts");
    if (r.prediction_depth < 0 || r.prediction_depth >= d.n_states) {
      throw ArgumentError("pd_distribution: prediction depth out of range for '" + r.question_id + "'");
    }
    (r.correct ? correct : incorrect)[static_cast<std::size_t>(r.prediction_depth)] += 1;
    (r.correct ? d.n_correct : d.n_incorrect) += 1;
  }
  auto to_pct = [](const std::vector<std::size_t>& counts, std::size_t total) {
    std::vector<double> pct;
    if (total == 0) return pct;
    for (auto c : counts) pct.push_back(100.0 * static_cast<double>(c) / static_cast<double>(total));
    return pct;
  };
  d.pct_correct = to_pct(correct, d.n_correct);
  d.pct_incorrect = to_pct(incorrect, d.n_incorrect);
  return d;
}

}  // namespace lensdyn
