#include "rldd/four_state.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "rldd/errors.hpp"
#include "rldd/rng.hpp"

namespace rldd::four_state {

namespace {

constexpr double kPSlip = 0.01;  // p(s2 | s1, a1)

void check_alpha(double alpha) {
  if (!(alpha >= 1.0 && alpha < 1.5)) throw InvalidArgument("four-state: alpha must lie in [1, 1.5)");
}

double reward_of(Pair p) {
  static constexpr std::array<double, kNumPairs> kReward{100.0, -10.0, -35.0, 30.0};
  return kReward[p];
}

}  // namespace

TabularMdp build_four_state_mdp() {
  constexpr std::size_t n_s = 4, n_a = 2;
  std::vector<std::vector<Successor>> rows(n_s * n_a);
  std::vector<double> reward(n_s * n_a, 0.0);
  auto set = [&](std::size_t s, std::size_t a, std::vector<Successor> succ, double r) {
    rows[s * n_a + a] = std::move(succ);
    reward[s * n_a + a] = r;
  };
  set(kS1, kA1, {{kS3, 1.0 - kPSlip}, {kS2, kPSlip}}, 100.0);
  set(kS1, kA2, {{kS2, 1.0}}, -10.0);
  set(kS2, kA1, {{kS4, 1.0}}, -35.0);
  set(kS2, kA2, {{kS4, 1.0}}, 30.0);
  for (std::size_t a = 0; a < n_a; ++a) {
    set(kS3, a, {{kS3, 1.0}}, 0.0);
    set(kS4, a, {{kS4, 1.0}}, 0.0);
  }
  return TabularMdp(n_s, n_a, std::move(rows), std::move(reward), 1.0, {1.0, 0.0, 0.0, 0.0},
                    {false, false, true, true}, /*episode_horizon=*/2);
}

FourStateFeatures::FourStateFeatures(double alpha) : alpha_(alpha) { check_alpha(alpha); }

std::array<double, 3> FourStateFeatures::phi(Pair pair) const {
  switch (pair) {
    case kS1A1: return {1.0, 0.0, 0.0};
    case kS1A2: return {0.0, 1.0, 0.0};
    case kS2A1: return {alpha_, 0.0, 0.0};
    case kS2A2: return {0.0, 0.0, 1.0};
  }
  throw DefectError("four-state: unknown pair");
}

WeightVec oracle_weights(double q_ratio, double alpha, bool allow_degenerate) {
  check_alpha(alpha);
  if (!(q_ratio >= 0.0 && q_ratio <= 1.0)) throw InvalidArgument("oracle_weights: q must lie in [0, 1]");
  if ((q_ratio == 0.0 || q_ratio == 1.0) && !allow_degenerate) {
    throw InvalidArgument("oracle_weights: q in {0, 1} is a single-point regression; set allow_degenerate");
  }
  const double q = q_ratio;
  const double w1 = (q * kOptimalQ[kS1A1] + alpha * (1.0 - q) * kOptimalQ[kS2A1]) /
                    (q + alpha * alpha * (1.0 - q));
  return {w1, kOptimalQ[kS1A2], kOptimalQ[kS2A2]};
}

RegimeBounds oracle_regime_bounds(double alpha) {
  check_alpha(alpha);
  const double a = alpha;
  return {a * (20.0 * a + 35.0) / (80.3 + 35.0 * a + 20.0 * a * a),
          65.0 * a * a / (65.0 * a * a + 100.3 * a - 30.0)};
}

std::array<double, 3> td_residuals(const WeightVec& w, double q, double alpha) {
  const double next_v = std::max(alpha * w.w1, w.w3);  // max_a Q_w(s2, a)
  const double r1 = q * (reward_of(kS1A1) + kPSlip * next_v - w.w1) +
                    (1.0 - q) * (reward_of(kS2A1) - alpha * w.w1) * alpha;
  const double r2 = reward_of(kS1A2) + next_v - w.w2;
  const double r3 = reward_of(kS2A2) - w.w3;
  return {r1, r2, r3};
}

TdFixedPoint td_fixed_point(double q_ratio, double alpha, double eta, double tol, std::size_t max_iters) {
  check_alpha(alpha);
  if (!(q_ratio >= 0.0 && q_ratio <= 1.0)) throw InvalidArgument("td_fixed_point: q must lie in [0, 1]");
  if (!(eta > 0.0 && eta < 1.0)) throw InvalidArgument("td_fixed_point: eta must lie in (0, 1)");
  if (!(tol > 0.0)) throw InvalidArgument("td_fixed_point: tol must be positive");
  TdFixedPoint out;
  for (std::size_t it = 1; it <= max_iters; ++it) {
    const auto r = td_residuals(out.w, q_ratio, alpha);
    out.w.w1 += eta * r[0];
    out.w.w2 += eta * r[1];
    out.w.w3 += eta * r[2];
    out.iterations = it;
    const double step = eta * std::max({std::abs(r[0]), std::abs(r[1]), std::abs(r[2])});
    if (step <= tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

int correct_action_count(const WeightVec& w, double alpha) {
  int count = 0;
  if (w.w1 > w.w2) ++count;
  if (alpha * w.w1 < w.w3) ++count;
  return count;
}

std::vector<double> linear_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw InvalidArgument("linear_grid: bad range");
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) grid[i] = lo + static_cast<double>(i) * step;
  return grid;
}

std::vector<SweepRow> sweep_offline(std::span<const double> alpha_grid, std::span<const double> q_grid,
                                    SolverMode mode) {
  if (alpha_grid.empty() || q_grid.empty()) throw InvalidArgument("sweep_offline: grids must be non-empty");
  std::vector<SweepRow> rows;
  rows.reserve(alpha_grid.size() * q_grid.size());
  for (double alpha : alpha_grid) {
    for (double q : q_grid) {
      WeightVec w;
      if (mode == SolverMode::kOracle) {
        w = oracle_weights(q, alpha, /*allow_degenerate=*/true);
      } else {
        const auto fp = td_fixed_point(q, alpha);
        if (!fp.converged) throw DivergedError("sweep_offline: TD iteration did not converge");
        w = fp.w;
      }
      rows.push_back({alpha, q, mode, correct_action_count(w, alpha)});
    }
  }
  return rows;
}

double greedy_expected_return(const WeightVec& w, double alpha) {
  const auto q = w.q_values(alpha);
  const Pair s2_choice = q[kS2A1] >= q[kS2A2] ? kS2A1 : kS2A2;
  const double s2_return = reward_of(s2_choice);
  if (q[kS1A1] >= q[kS1A2]) return reward_of(kS1A1) + kPSlip * s2_return;
  return reward_of(kS1A2) + s2_return;
}

std::vector<OnlineRecord> online_sim(const OnlineConfig& config) {
  const FourStateFeatures features(config.alpha);
  if (config.episodes < 1) throw InvalidArgument("online_sim: episodes must be >= 1");
  if (!(config.eta > 0.0 && config.eta < 1.0)) throw InvalidArgument("online_sim: eta must lie in (0, 1)");
  if (config.replay.capacity && *config.replay.capacity < 1) {
    throw InvalidArgument("online_sim: bounded capacity must be >= 1");
  }
  if (config.replay.policy == ReplaySpec::Policy::kEpsGreedy &&
      !(config.replay.epsilon >= 0.0 && config.replay.epsilon <= 1.0)) {
    throw InvalidArgument("online_sim: epsilon must lie in [0, 1]");
  }
  const std::size_t record_every = std::max<std::size_t>(1, config.record_every);
  const double alpha = config.alpha;
  const bool synthetic = config.replay.policy == ReplaySpec::Policy::kUniformSynthetic;

  Rng rng(config.seed);
  WeightVec w;
  std::deque<Pair> buffer;
  std::array<double, kNumPairs> counts{};
  std::vector<OnlineRecord> records;

  auto act = [&](std::span<const double> row) -> std::size_t {
    if (rng.uniform() < config.replay.epsilon) return rng.index(2);
    return argmax_action(row);
  };
  auto store = [&](Pair p) {
    buffer.push_back(p);
    counts[p] += 1.0;
    if (config.replay.capacity && buffer.size() > *config.replay.capacity) {
      counts[buffer.front()] -= 1.0;
      buffer.pop_front();
    }
  };

  for (std::size_t episode = 1; episode <= config.episodes; ++episode) {
    std::array<double, kNumPairs> mu{};
    if (synthetic) {
      mu.fill(0.25);
    } else {
      const auto q = w.q_values(alpha);
      const std::array<double, 2> s1_row{q[kS1A1], q[kS1A2]};
      const std::array<double, 2> s2_row{q[kS2A1], q[kS2A2]};
      bool at_s2 = false;
      if (act(s1_row) == kA1) {
        store(kS1A1);
        at_s2 = rng.uniform() >= 1.0 - kPSlip;
      } else {
        store(kS1A2);
        at_s2 = true;
      }
      if (at_s2) store(act(s2_row) == kA1 ? kS2A1 : kS2A2);
      const auto total = static_cast<double>(buffer.size());
      for (std::size_t p = 0; p < kNumPairs; ++p) mu[p] = counts[p] / total;
    }

    // One exact expected semi-gradient step under mu.
    const double next_v = std::max(alpha * w.w1, w.w3);
    const std::array<double, kNumPairs> target{reward_of(kS1A1) + kPSlip * next_v,
                                               reward_of(kS1A2) + next_v, reward_of(kS2A1),
                                               reward_of(kS2A2)};
    const auto q_before = w.q_values(alpha);
    std::array<double, 3> delta{};
    for (std::size_t p = 0; p < kNumPairs; ++p) {
      if (mu[p] == 0.0) continue;
      const auto phi = features.phi(static_cast<Pair>(p));
      const double td = target[p] - q_before[p];
      for (std::size_t k = 0; k < 3; ++k) delta[k] += mu[p] * td * phi[k];
    }
    w.w1 += config.eta * delta[0];
    w.w2 += config.eta * delta[1];
    w.w3 += config.eta * delta[2];

    if (episode % record_every == 0 || episode == config.episodes) {
      OnlineRecord rec;
      rec.episode = episode;
      rec.w = w;
      rec.q_values = w.q_values(alpha);
      rec.buffer_mu = mu;
      rec.greedy_reward = greedy_expected_return(w, alpha);
      rec.correct_actions = correct_action_count(w, alpha);
      double err = 0.0;
      for (std::size_t p = 0; p < kNumPairs; ++p) err += std::abs(rec.q_values[p] - kOptimalQ[p]);
      rec.mean_q_error = err / static_cast<double>(kNumPairs);
      records.push_back(rec);
    }
  }
  return records;
}

double trailing_q_error_std(std::span<const OnlineRecord> records, std::size_t window) {
  if (records.empty() || window == 0) throw InvalidArgument("trailing_q_error_std: empty window");
  const std::size_t n = std::min(window, records.size());
  const auto tail = records.subspan(records.size() - n);
  double mean = 0.0;
  for (const auto& r : tail) mean += r.mean_q_error;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (const auto& r : tail) var += (r.mean_q_error - mean) * (r.mean_q_error - mean);
  return std::sqrt(var / static_cast<double>(n));
}

}  // namespace rldd::four_state
