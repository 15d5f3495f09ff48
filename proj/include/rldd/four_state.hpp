#pragma once

// Four-state MDP with a deliberately under-parameterized linear Q-function:
// Q_w(s1,a1) = w1, Q_w(s1,a2) = w2, Q_w(s2,a1) = alpha * w1, Q_w(s2,a2) = w3.
// The shared weight w1 couples the two a1 pairs, so the sampling ratio
// between them decides which greedy actions come out right.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rldd/mdp.hpp"

namespace rldd::four_state {

// State and action ids in the MDP returned by build_four_state_mdp().
inline constexpr std::size_t kS1 = 0, kS2 = 1, kS3 = 2, kS4 = 3;
inline constexpr std::size_t kA1 = 0, kA2 = 1;

/// The four non-terminal pairs in a fixed order: (s1,a1), (s1,a2), (s2,a1), (s2,a2).
inline constexpr std::size_t kNumPairs = 4;
enum Pair : std::size_t { kS1A1 = 0, kS1A2 = 1, kS2A1 = 2, kS2A2 = 3 };

/// Q* on the non-terminal pairs, in Pair order.
inline constexpr std::array<double, kNumPairs> kOptimalQ{100.3, 20.0, -35.0, 30.0};

/// s1 start; s3, s4 absorbing. (s1,a1) -> s3 w.p. 0.99, s2 w.p. 0.01;
/// (s1,a2) -> s2; (s2, .) -> s4. gamma = 1.
TabularMdp build_four_state_mdp();

/// Feature correlation parameter alpha in [1, 1.5).
class FourStateFeatures {
 public:
  explicit FourStateFeatures(double alpha);
  double alpha() const { return alpha_; }
  /// phi for a pair, 3 components.
  std::array<double, 3> phi(Pair pair) const;

 private:
  double alpha_;
};

struct WeightVec {
  double w1 = 0.0;
  double w2 = 0.0;
  double w3 = 0.0;

  /// Q_w in Pair order.
  std::array<double, kNumPairs> q_values(double alpha) const {
    return {w1, w2, alpha * w1, w3};
  }
};

/// Weighted least-squares fit to Q* with mu(s1,a1) : mu(s2,a1) = q : (1 - q).
/// q in {0, 1} is a single-point regression and needs allow_degenerate.
WeightVec oracle_weights(double q_ratio, double alpha, bool allow_degenerate = false);

struct RegimeBounds {
  double lower;
  double upper;
};

/// The open interval of q in which oracle_weights yields the optimal policy.
RegimeBounds oracle_regime_bounds(double alpha);

struct TdFixedPoint {
  WeightVec w;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Iterates the expected semi-gradient TD updates from w = 0. The w1 update is
/// weighted by q and (1 - q); the w2 and w3 updates act at their own unit
/// rates (their sampling masses only rescale the step).
TdFixedPoint td_fixed_point(double q_ratio, double alpha, double eta = 0.1, double tol = 1e-12,
                            std::size_t max_iters = 1000000);

/// Residuals of the three expected updates at w (zero at a fixed point).
std::array<double, 3> td_residuals(const WeightVec& w, double q_ratio, double alpha);

/// +1 if w1 > w2 (s1 correct), +1 if alpha * w1 < w3 (s2 correct). Ties are wrong.
int correct_action_count(const WeightVec& w, double alpha);

enum class SolverMode { kOracle, kTd };

struct SweepRow {
  double alpha;
  double q;
  SolverMode mode;
  int correct_actions;
};

std::vector<SweepRow> sweep_offline(std::span<const double> alpha_grid, std::span<const double> q_grid,
                                    SolverMode mode);

/// Evenly spaced grid lo, lo + step, ..., computed from integer indices.
std::vector<double> linear_grid(double lo, double hi, double step);

struct ReplaySpec {
  enum class Policy { kUniformSynthetic, kEpsGreedy };
  /// nullopt = unlimited. Counted in stored transitions.
  std::optional<std::size_t> capacity;
  Policy policy = Policy::kEpsGreedy;
  double epsilon = 1.0;

  static ReplaySpec uniform_synthetic() { return {std::nullopt, Policy::kUniformSynthetic, 0.0}; }
  static ReplaySpec eps_greedy(double eps, std::optional<std::size_t> capacity = std::nullopt) {
    return {capacity, Policy::kEpsGreedy, eps};
  }
};

struct OnlineRecord {
  std::size_t episode;
  WeightVec w;
  std::array<double, kNumPairs> q_values;
  std::array<double, kNumPairs> buffer_mu;
  double greedy_reward;  // exact expected return of the greedy policy from s1
  int correct_actions;
  double mean_q_error;   // mean |Q_w - Q*| over the four pairs
};

struct OnlineConfig {
  ReplaySpec replay;
  double alpha = 1.2;
  std::size_t episodes = 10000;
  double eta = 0.05;
  std::uint64_t seed = 0;
  /// Keep every record_every-th episode (the last episode is always kept).
  std::size_t record_every = 1;
};

/// Online learning with a replay buffer. Each episode acts from s1 to
/// termination (epsilon-greedy w.r.t. Q_w, ties to the lowest action index),
/// appends the visited pairs FIFO, then applies one exact expected
/// semi-gradient update under the buffer's empirical pair distribution.
/// uniform_synthetic skips acting and fixes mu at 1/4 per pair.
std::vector<OnlineRecord> online_sim(const OnlineConfig& config);

/// Standard deviation of mean_q_error over the last `window` records.
double trailing_q_error_std(std::span<const OnlineRecord> records, std::size_t window);

/// Exact expected return from s1 of the greedy policy w.r.t. Q_w.
double greedy_expected_return(const WeightVec& w, double alpha);

}  // namespace rldd::four_state
