#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rldd/approx.hpp"
#include "rldd/dataset.hpp"
#include "rldd/envs.hpp"
#include "rldd/mdp.hpp"

namespace rldd {

enum class CqlPenalty { kLogsumexpMinusData, kMaxQ };

CqlPenalty cql_penalty_from_string(const std::string& name);
std::string to_string(CqlPenalty penalty);

struct TrainConfig {
  std::size_t batch_size = 100;
  std::size_t target_update_period = 1000;
  std::size_t learning_steps = 100000;
  double gamma = 0.9;
  double cql_alpha = 1.0;
  CqlPenalty cql_penalty = CqlPenalty::kLogsumexpMinusData;
  AdamConfig adam;
  /// Evaluate every eval_fraction of the learning steps, plus at the end.
  double eval_fraction = 0.05;
  std::size_t n_eval_rollouts = 5;
  double divergence_threshold = 1e6;
  std::vector<std::size_t> hidden{20, 40, 20};
  Activation activation = Activation::kRelu;
  std::size_t dataset_size = 50000;
  std::uint64_t seed = 0;
};

/// Table defaults per environment: steps, dataset size, widths and gamma.
TrainConfig default_train_config(const std::string& env_id);
/// Reads overrides from JSON on top of `base`. Unknown keys are rejected.
TrainConfig apply_overrides(TrainConfig base, const nlohmann::json& overrides);
nlohmann::json to_json(const TrainConfig& cfg);

/// Fresh network for an environment: Mlp(feature_dim, hidden..., n_actions).
std::unique_ptr<QModel> make_network(const Environment& env, const TrainConfig& cfg, std::uint64_t seed);

/// State to network input. This is all an offline trainer sees of the
/// environment.
class FeatureEncoder {
 public:
  explicit FeatureEncoder(const Environment& env) : env_(env) {}
  std::size_t dim() const { return env_.feature_dim(); }
  std::size_t n_actions() const { return env_.n_actions(); }
  void encode(const StateVec& s, std::span<double> out) const { env_.features(s, out); }

 private:
  const Environment& env_;
};

// ─── Evaluation ─────────────────────────────────────────────────────────────

/// Reference solution over cells (tabular states or discretizer cells) and
/// the two return baselines used for normalization.
struct Reference {
  QTable q;
  double r_opt = 0.0;
  double r_rand = 0.0;
  std::size_t n_baseline_episodes = 0;
};

inline constexpr std::size_t kBaselineEpisodes = 200;
inline constexpr double kNormalizedMin = -0.1;
inline constexpr double kNormalizedMax = 1.1;

/// Tabular: value iteration. Continuous: value iteration on discretized_mdp
/// (5 samples per cell, 1 for cartpole). Baselines from greedy and uniform
/// random rollouts.
Reference compute_reference(const Environment& env, std::uint64_t seed,
                            std::size_t n_episodes = kBaselineEpisodes);

struct EvalResult {
  double mean_return = 0.0;
  double normalized_return = 0.0;
  double q_error = 0.0;
  bool has_q_error = false;
};

double normalize_return(double r, double r_opt, double r_rand);

class Evaluator {
 public:
  /// reference may be null: normalization then falls back to raw returns
  /// and Q-error is flagged missing.
  Evaluator(const Environment& env, const Reference* reference) : env_(env), ref_(reference) {}

  /// Greedy rollouts (ties to the lowest action).
  EvalResult evaluate(const QModel& model, std::size_t n_rollouts, std::uint64_t seed) const;
  EvalResult evaluate(const PolicyTable& policy, std::size_t n_rollouts, std::uint64_t seed) const;
  /// Mean |Q_model - Q_ref| over all cells and actions (cell representatives).
  double q_error(const QModel& model) const;

 private:
  const Environment& env_;
  const Reference* ref_;
};

// ─── Run results ────────────────────────────────────────────────────────────

struct SeriesPoint {
  std::size_t step = 0;
  double loss = 0.0;  // mean training loss since the previous point
  double eval_return = 0.0;
  double normalized_return = 0.0;
  double q_error = 0.0;
};

struct RunResult {
  std::string algorithm;
  std::vector<SeriesPoint> series;
  EvalResult final_eval;
  bool diverged = false;
  std::string divergence_message;
  std::size_t steps_completed = 0;
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const RunResult& r);
/// step,loss,eval_return,normalized_return,q_error with %.17g.
void write_series_csv(const RunResult& r, const std::string& path);

// ─── Trainers ───────────────────────────────────────────────────────────────

RunResult offline_dqn(const Dataset& dataset, const FeatureEncoder& encoder, QModel& model,
                      const TrainConfig& cfg, const Evaluator* evaluator);

RunResult offline_cql(const Dataset& dataset, const FeatureEncoder& encoder, QModel& model,
                      const TrainConfig& cfg, const Evaluator* evaluator);

/// FIFO store with per-pair counts. capacity nullopt = unlimited.
class ReplayBuffer {
 public:
  ReplayBuffer(std::optional<std::size_t> capacity, std::size_t n_pairs);

  void push(const Transition& tr, std::size_t pair);
  std::size_t size() const { return items_.size(); }
  std::optional<std::size_t> capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return items_[i].tr; }
  const Transition& sample(Rng& rng) const { return items_[rng.index(items_.size())].tr; }
  const std::vector<double>& counts() const { return counts_; }

 private:
  struct Item {
    Transition tr;
    std::size_t pair;
  };
  std::optional<std::size_t> capacity_;
  std::deque<Item> items_;
  std::vector<double> counts_;
};

struct EpsilonSchedule {
  double start = 0.1;
  double end = 0.1;
  std::size_t decay_steps = 0;  // linear decay over environment steps

  double at(std::size_t env_step) const;
};

struct OnlineTrainConfig {
  TrainConfig train;
  EpsilonSchedule epsilon;
  std::size_t env_steps_per_iter = 1;   // S
  std::size_t grad_steps_per_iter = 1;  // G
  /// Minimum buffer size before gradient steps start (>= batch size).
  std::size_t warmup = 0;
};

/// Generic Q-learning with replay: each iteration takes S environment steps
/// with an epsilon-greedy behavior, then G gradient steps on uniform replay
/// minibatches (batch_size 0 = the whole buffer). learning_steps counts
/// gradient steps; the target syncs every target_update_period of them.
RunResult online_q_learning(const Environment& env, QModel& model, ReplayBuffer& replay,
                            const OnlineTrainConfig& cfg, const Evaluator* evaluator);

}  // namespace rldd
