#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

namespace rldd {

// ─── Tables ─────────────────────────────────────────────────────────────────

/// Q[s][a], row-major. Entries must be finite.
class QTable {
 public:
  QTable() = default;
  QTable(std::size_t n_states, std::size_t n_actions, double fill = 0.0);
  QTable(std::size_t n_states, std::size_t n_actions, std::vector<double> values);

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  double operator()(std::size_t s, std::size_t a) const { return values_[s * n_actions_ + a]; }
  double& operator()(std::size_t s, std::size_t a) { return values_[s * n_actions_ + a]; }
  std::span<const double> row(std::size_t s) const {
    return {values_.data() + s * n_actions_, n_actions_};
  }
  const std::vector<double>& values() const { return values_; }

 private:
  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  std::vector<double> values_;
};

/// Stochastic policy pi(a|s). Rows are validated to be distributions.
class PolicyTable {
 public:
  PolicyTable() = default;
  PolicyTable(std::size_t n_states, std::size_t n_actions, std::vector<double> probs);

  static PolicyTable deterministic(std::span<const std::size_t> actions, std::size_t n_actions);
  static PolicyTable uniform(std::size_t n_states, std::size_t n_actions);

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  double operator()(std::size_t s, std::size_t a) const { return probs_[s * n_actions_ + a]; }
  std::span<const double> row(std::size_t s) const {
    return {probs_.data() + s * n_actions_, n_actions_};
  }
  const std::vector<double>& probs() const { return probs_; }

 private:
  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  std::vector<double> probs_;
};

/// Probability vector over state-action pairs (index s * n_actions + a), or
/// over states when used as a state distribution.
class DistributionSA {
 public:
  DistributionSA() = default;
  explicit DistributionSA(std::vector<double> probs);

  static DistributionSA uniform(std::size_t n);
  static DistributionSA point_mass(std::size_t n, std::size_t i);
  /// Normalizes non-negative counts. Throws if all counts are zero.
  static DistributionSA from_counts(std::span<const double> counts);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  const std::vector<double>& probs() const { return probs_; }

 private:
  std::vector<double> probs_;
};

// ─── MDP ────────────────────────────────────────────────────────────────────

struct Successor {
  std::size_t state;
  double prob;
};

/// Finite MDP with sparse transition rows. Immutable after construction.
///
/// Terminal states self-loop with zero reward under every action; their value
/// is zero. gamma == 1 is accepted only when every policy reaches a terminal
/// state with probability one.
class TabularMdp {
 public:
  /// transitions[s * n_actions + a] lists the successors of (s, a); zero
  /// entries may be omitted.
  TabularMdp(std::size_t n_states, std::size_t n_actions,
             std::vector<std::vector<Successor>> transitions, std::vector<double> reward,
             double gamma, std::vector<double> initial_dist, std::vector<bool> terminal_mask,
             int episode_horizon);

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  std::size_t n_pairs() const { return n_states_ * n_actions_; }
  std::size_t pair_index(std::size_t s, std::size_t a) const { return s * n_actions_ + a; }

  std::span<const Successor> successors(std::size_t s, std::size_t a) const;
  /// Dense lookup p(s2 | s, a).
  double transition(std::size_t s, std::size_t a, std::size_t s2) const;
  double reward(std::size_t s, std::size_t a) const { return reward_[pair_index(s, a)]; }
  double gamma() const { return gamma_; }
  std::span<const double> initial_dist() const { return initial_; }
  bool is_terminal(std::size_t s) const { return terminal_[s]; }
  const std::vector<bool>& terminal_mask() const { return terminal_; }
  int episode_horizon() const { return horizon_; }

  /// True iff no policy can avoid the terminal states forever.
  bool all_policies_proper() const;

  nlohmann::json to_json() const;
  static TabularMdp from_json(const nlohmann::json& doc);

 private:
  void validate() const;

  std::size_t n_states_;
  std::size_t n_actions_;
  std::vector<std::size_t> row_offsets_;
  std::vector<Successor> successors_;
  std::vector<double> reward_;
  double gamma_;
  std::vector<double> initial_;
  std::vector<bool> terminal_;
  int horizon_;
};

// ─── Solvers and policy machinery ───────────────────────────────────────────

struct ValueIterationOptions {
  double tol = 1e-10;
  std::size_t max_sweeps = 100000;
};

/// Synchronous value iteration. The returned Q has sup-norm Bellman residual
/// <= tol. Throws DivergedError after max_sweeps.
QTable value_iteration(const TabularMdp& mdp, const ValueIterationOptions& options = {});

/// One synchronous Bellman optimality backup.
QTable bellman_backup(const TabularMdp& mdp, const QTable& q);

/// Iterative policy evaluation of Q^pi.
QTable policy_evaluation(const TabularMdp& mdp, const PolicyTable& policy, double tol = 1e-10,
                         std::size_t max_sweeps = 100000);

inline constexpr std::size_t kGreedyPolicyCap = 4096;

struct GreedyPolicySet {
  std::vector<PolicyTable> policies;
  /// Product of per-state tie counts, saturated at SIZE_MAX.
  std::size_t total_count = 0;
  bool truncated = false;
};

/// Every deterministic policy that picks, in each state, an action within
/// tie_tol of the row maximum. Enumeration order is lexicographic with the
/// last state varying fastest; stops at `cap` policies.
GreedyPolicySet greedy_policies(const QTable& q, double tie_tol, std::size_t cap = kGreedyPolicyCap);

/// Action with the largest value; ties resolve to the lowest index.
std::size_t argmax_action(std::span<const double> row);

enum class TieBreak { kSplitEqually, kLowestIndex };

struct BehaviorSpec {
  enum class Kind { kEpsGreedy, kBoltzmann };
  Kind kind = Kind::kEpsGreedy;
  double param = 0.0;  // epsilon or temperature

  static BehaviorSpec eps_greedy(double eps) { return {Kind::kEpsGreedy, eps}; }
  static BehaviorSpec boltzmann(double t) { return {Kind::kBoltzmann, t}; }
};

inline constexpr double kBoltzmannMinTemperature = 1e-3;

/// Rejects epsilon outside [0, 1] and |t| below kBoltzmannMinTemperature.
void validate_behavior(const BehaviorSpec& spec);

/// Epsilon-greedy or Boltzmann policy derived from q. Epsilon-greedy puts
/// (1 - eps) on the greedy action(s) plus eps / |A| everywhere; with
/// kSplitEqually the greedy mass is shared among exactly tied actions.
/// Boltzmann: pi(a|s) proportional to exp(Q(s,a) / t); negative t prefers
/// low-valued actions.
PolicyTable behavior_policy(const QTable& q, const BehaviorSpec& spec,
                            TieBreak ties = TieBreak::kSplitEqually);

enum class OccupancyMode { kDiscounted, kEpisodicVisitation };

/// State-action occupancy of `policy`.
///  - kDiscounted: normalized sum_t gamma^t Pr(s_t, a_t), computed exactly by
///    forward recursion; the series stops once gamma^t < 1e-10 or at the
///    episode horizon.
///  - kEpisodicVisitation: empirical (s, a) frequency over n_rollouts episodes.
DistributionSA occupancy_sa(const TabularMdp& mdp, const PolicyTable& policy, OccupancyMode mode,
                            std::size_t n_rollouts, std::uint64_t seed);

class Rng;

/// One transition of a tabular episode.
struct TabularStep {
  std::size_t s;
  std::size_t a;
  double r;
  std::size_t s_next;
  bool done;
};

/// Samples s' ~ p(.|s, a).
std::size_t sample_successor(const TabularMdp& mdp, std::size_t s, std::size_t a, Rng& rng);

/// Runs one episode from p0 until a terminal state or the horizon. Returns the
/// undiscounted return.
template <typename Visitor>
double run_tabular_episode(const TabularMdp& mdp, const PolicyTable& policy, Rng& rng,
                           Visitor&& visit);

}  // namespace rldd

#include "rldd/rng.hpp"

namespace rldd {

template <typename Visitor>
double run_tabular_episode(const TabularMdp& mdp, const PolicyTable& policy, Rng& rng,
                           Visitor&& visit) {
  std::size_t s = rng.categorical(mdp.initial_dist());
  double ret = 0.0;
  for (int t = 0; t < mdp.episode_horizon(); ++t) {
    if (mdp.is_terminal(s)) break;
    const std::size_t a = rng.categorical(policy.row(s));
    const std::size_t s2 = sample_successor(mdp, s, a, rng);
    const double r = mdp.reward(s, a);
    ret += r;
    visit(TabularStep{s, a, r, s2, mdp.is_terminal(s2)});
    s = s2;
  }
  return ret;
}

}  // namespace rldd
