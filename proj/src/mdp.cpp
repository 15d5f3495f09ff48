#include "rldd/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include "rldd/errors.hpp"
#include "rldd/rng.hpp"

namespace rldd {

namespace {

constexpr double kSumTol = 1e-12;

void check_distribution(std::span<const double> p, const char* what) {
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw InvalidArgument(std::string(what) + ": entries must be finite and non-negative");
    }
    sum += x;
  }
  if (std::abs(sum - 1.0) > kSumTol * std::max<std::size_t>(1, p.size())) {
    std::ostringstream msg;
    msg << what << ": probabilities sum to " << sum << ", expected 1";
    throw InvalidArgument(msg.str());
  }
}

}  // namespace

// ─── Tables ─────────────────────────────────────────────────────────────────

QTable::QTable(std::size_t n_states, std::size_t n_actions, double fill)
    : n_states_(n_states), n_actions_(n_actions), values_(n_states * n_actions, fill) {}

QTable::QTable(std::size_t n_states, std::size_t n_actions, std::vector<double> values)
    : n_states_(n_states), n_actions_(n_actions), values_(std::move(values)) {
  if (values_.size() != n_states * n_actions) throw InvalidArgument("QTable: size mismatch");
  for (double v : values_) {
    if (!std::isfinite(v)) throw InvalidArgument("QTable: non-finite entry");
  }
}

PolicyTable::PolicyTable(std::size_t n_states, std::size_t n_actions, std::vector<double> probs)
    : n_states_(n_states), n_actions_(n_actions), probs_(std::move(probs)) {
  if (probs_.size() != n_states * n_actions) throw InvalidArgument("PolicyTable: size mismatch");
  for (std::size_t s = 0; s < n_states; ++s) check_distribution(row(s), "PolicyTable row");
}

PolicyTable PolicyTable::deterministic(std::span<const std::size_t> actions,
                                       std::size_t n_actions) {
  std::vector<double> probs(actions.size() * n_actions, 0.0);
  for (std::size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] >= n_actions) throw InvalidArgument("PolicyTable: action out of range");
    probs[s * n_actions + actions[s]] = 1.0;
  }
  return PolicyTable(actions.size(), n_actions, std::move(probs));
}

PolicyTable PolicyTable::uniform(std::size_t n_states, std::size_t n_actions) {
  return PolicyTable(n_states, n_actions,
                     std::vector<double>(n_states * n_actions, 1.0 / static_cast<double>(n_actions)));
}

DistributionSA::DistributionSA(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw InvalidArgument("DistributionSA: empty");
  check_distribution(probs_, "DistributionSA");
}

DistributionSA DistributionSA::uniform(std::size_t n) {
  return DistributionSA(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

DistributionSA DistributionSA::point_mass(std::size_t n, std::size_t i) {
  std::vector<double> p(n, 0.0);
  p.at(i) = 1.0;
  return DistributionSA(std::move(p));
}

DistributionSA DistributionSA::from_counts(std::span<const double> counts) {
  double total = 0.0;
  for (double c : counts) {
    if (!(c >= 0.0)) throw InvalidArgument("DistributionSA::from_counts: negative count");
    total += c;
  }
  if (total <= 0.0) throw InvalidArgument("DistributionSA::from_counts: no mass");
  std::vector<double> p(counts.begin(), counts.end());
  for (double& x : p) x /= total;
  return DistributionSA(std::move(p));
}

// ─── TabularMdp ─────────────────────────────────────────────────────────────

TabularMdp::TabularMdp(std::size_t n_states, std::size_t n_actions,
                       std::vector<std::vector<Successor>> transitions, std::vector<double> reward,
                       double gamma, std::vector<double> initial_dist,
                       std::vector<bool> terminal_mask, int episode_horizon)
    : n_states_(n_states),
      n_actions_(n_actions),
      reward_(std::move(reward)),
      gamma_(gamma),
      initial_(std::move(initial_dist)),
      terminal_(std::move(terminal_mask)),
      horizon_(episode_horizon) {
  if (n_states == 0 || n_actions == 0) throw InvalidArgument("TabularMdp: empty state/action set");
  if (transitions.size() != n_pairs()) throw InvalidArgument("TabularMdp: transition row count");
  row_offsets_.reserve(n_pairs() + 1);
  row_offsets_.push_back(0);
  for (auto& row : transitions) {
    std::sort(row.begin(), row.end(),
              [](const Successor& x, const Successor& y) { return x.state < y.state; });
    for (const Successor& succ : row) {
      if (succ.prob == 0.0) continue;
      if (!successors_.empty() && successors_.size() > row_offsets_.back() &&
          successors_.back().state == succ.state) {
        successors_.back().prob += succ.prob;
      } else {
        successors_.push_back(succ);
      }
    }
    row_offsets_.push_back(successors_.size());
  }
  validate();
}

void TabularMdp::validate() const {
  if (reward_.size() != n_pairs()) throw InvalidArgument("TabularMdp: reward size");
  if (initial_.size() != n_states_) throw InvalidArgument("TabularMdp: initial_dist size");
  if (terminal_.size() != n_states_) throw InvalidArgument("TabularMdp: terminal_mask size");
  if (!(gamma_ > 0.0 && gamma_ <= 1.0)) throw InvalidArgument("TabularMdp: gamma must be in (0, 1]");
  if (horizon_ < 1) throw InvalidArgument("TabularMdp: episode_horizon must be >= 1");
  check_distribution(initial_, "TabularMdp initial_dist");
  for (double r : reward_) {
    if (!std::isfinite(r)) throw InvalidArgument("TabularMdp: non-finite reward");
  }
  for (std::size_t s = 0; s < n_states_; ++s) {
    for (std::size_t a = 0; a < n_actions_; ++a) {
      auto row = successors(s, a);
      double sum = 0.0;
      for (const Successor& succ : row) {
        if (succ.state >= n_states_) throw InvalidArgument("TabularMdp: successor out of range");
        if (!(succ.prob > 0.0)) throw InvalidArgument("TabularMdp: negative transition probability");
        sum += succ.prob;
      }
      if (std::abs(sum - 1.0) > kSumTol * std::max<std::size_t>(1, row.size())) {
        std::ostringstream msg;
        msg << "TabularMdp: P[" << s << "][" << a << "] sums to " << sum;
        throw InvalidArgument(msg.str());
      }
      if (terminal_[s]) {
        if (row.size() != 1 || row[0].state != s || reward(s, a) != 0.0) {
          throw InvalidArgument("TabularMdp: terminal states must self-loop with zero reward");
        }
      }
    }
  }
  if (gamma_ == 1.0 && !all_policies_proper()) {
    throw InvalidArgument("TabularMdp: gamma = 1 requires every policy to reach a terminal state");
  }
}

std::span<const Successor> TabularMdp::successors(std::size_t s, std::size_t a) const {
  const std::size_t i = pair_index(s, a);
  return {successors_.data() + row_offsets_[i], row_offsets_[i + 1] - row_offsets_[i]};
}

double TabularMdp::transition(std::size_t s, std::size_t a, std::size_t s2) const {
  for (const Successor& succ : successors(s, a)) {
    if (succ.state == s2) return succ.prob;
  }
  return 0.0;
}

bool TabularMdp::all_policies_proper() const {
  // Greatest set W of non-terminal states in which some action keeps the
  // whole successor support inside W. Non-empty W admits an improper policy.
  std::vector<bool> in_w(n_states_);
  for (std::size_t s = 0; s < n_states_; ++s) in_w[s] = !terminal_[s];
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t s = 0; s < n_states_; ++s) {
      if (!in_w[s]) continue;
      bool can_stay = false;
      for (std::size_t a = 0; a < n_actions_ && !can_stay; ++a) {
        can_stay = std::all_of(successors(s, a).begin(), successors(s, a).end(),
                               [&](const Successor& x) { return in_w[x.state]; });
      }
      if (!can_stay) {
        in_w[s] = false;
        changed = true;
      }
    }
  }
  return std::none_of(in_w.begin(), in_w.end(), [](bool b) { return b; });
}

nlohmann::json TabularMdp::to_json() const {
  nlohmann::json transition = nlohmann::json::array();
  nlohmann::json rewards = nlohmann::json::array();
  for (std::size_t s = 0; s < n_states_; ++s) {
    nlohmann::json per_action = nlohmann::json::array();
    nlohmann::json r_row = nlohmann::json::array();
    for (std::size_t a = 0; a < n_actions_; ++a) {
      std::vector<double> dense(n_states_, 0.0);
      for (const Successor& succ : successors(s, a)) dense[succ.state] = succ.prob;
      per_action.push_back(dense);
      r_row.push_back(reward(s, a));
    }
    transition.push_back(per_action);
    rewards.push_back(r_row);
  }
  return {{"n_states", n_states_},
          {"n_actions", n_actions_},
          {"transition", transition},
          {"reward", rewards},
          {"gamma", gamma_},
          {"initial_dist", initial_},
          {"terminal_mask", terminal_},
          {"episode_horizon", horizon_}};
}

TabularMdp TabularMdp::from_json(const nlohmann::json& doc) {
  try {
    const auto n_states = doc.at("n_states").get<std::size_t>();
    const auto n_actions = doc.at("n_actions").get<std::size_t>();
    const auto& transition = doc.at("transition");
    const auto& reward = doc.at("reward");
    if (transition.size() != n_states || reward.size() != n_states) {
      throw InvalidArgument("TabularMdp JSON: row count does not match n_states");
    }
    std::vector<std::vector<Successor>> rows(n_states * n_actions);
    std::vector<double> r(n_states * n_actions);
    for (std::size_t s = 0; s < n_states; ++s) {
      if (transition[s].size() != n_actions || reward[s].size() != n_actions) {
        throw InvalidArgument("TabularMdp JSON: action count does not match n_actions");
      }
      for (std::size_t a = 0; a < n_actions; ++a) {
        const auto dense = transition[s][a].get<std::vector<double>>();
        if (dense.size() != n_states) throw InvalidArgument("TabularMdp JSON: successor row size");
        for (std::size_t s2 = 0; s2 < n_states; ++s2) {
          if (dense[s2] != 0.0) rows[s * n_actions + a].push_back({s2, dense[s2]});
        }
        r[s * n_actions + a] = reward[s][a].get<double>();
      }
    }
    return TabularMdp(n_states, n_actions, std::move(rows), std::move(r),
                      doc.at("gamma").get<double>(),
                      doc.at("initial_dist").get<std::vector<double>>(),
                      doc.at("terminal_mask").get<std::vector<bool>>(),
                      doc.at("episode_horizon").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("TabularMdp JSON: ") + e.what());
  }
}

// ─── Solvers ────────────────────────────────────────────────────────────────

std::size_t argmax_action(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t a = 1; a < row.size(); ++a) {
    if (row[a] > row[best]) best = a;
  }
  return best;
}

namespace {

std::vector<double> state_values(const TabularMdp& mdp, const QTable& q) {
  std::vector<double> v(mdp.n_states(), 0.0);
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    if (mdp.is_terminal(s)) continue;
    auto row = q.row(s);
    v[s] = *std::max_element(row.begin(), row.end());
  }
  return v;
}

}  // namespace

QTable bellman_backup(const TabularMdp& mdp, const QTable& q) {
  const auto v = state_values(mdp, q);
  QTable out(mdp.n_states(), mdp.n_actions());
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    if (mdp.is_terminal(s)) continue;
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      double expected = 0.0;
      for (const Successor& succ : mdp.successors(s, a)) expected += succ.prob * v[succ.state];
      out(s, a) = mdp.reward(s, a) + mdp.gamma() * expected;
    }
  }
  return out;
}

QTable value_iteration(const TabularMdp& mdp, const ValueIterationOptions& options) {
  if (!(options.tol > 0.0)) throw InvalidArgument("value_iteration: tol must be positive");
  QTable q(mdp.n_states(), mdp.n_actions());
  double residual = std::numeric_limits<double>::infinity();
  for (std::size_t sweep = 0; sweep < options.max_sweeps; ++sweep) {
    QTable next = bellman_backup(mdp, q);
    residual = 0.0;
    for (std::size_t i = 0; i < next.values().size(); ++i) {
      residual = std::max(residual, std::abs(next.values()[i] - q.values()[i]));
    }
    q = std::move(next);
    // ||T q_new - q_new|| <= gamma * ||q_new - q_old|| <= tol.
    if (residual <= options.tol) return q;
  }
  std::ostringstream msg;
  msg << "value_iteration diverged: residual " << residual << " after " << options.max_sweeps
      << " sweeps";
  throw DivergedError(msg.str());
}

QTable policy_evaluation(const TabularMdp& mdp, const PolicyTable& policy, double tol,
                         std::size_t max_sweeps) {
  QTable q(mdp.n_states(), mdp.n_actions());
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    std::vector<double> v(mdp.n_states(), 0.0);
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
      if (mdp.is_terminal(s)) continue;
      for (std::size_t a = 0; a < mdp.n_actions(); ++a) v[s] += policy(s, a) * q(s, a);
    }
    QTable next(mdp.n_states(), mdp.n_actions());
    double residual = 0.0;
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
      if (mdp.is_terminal(s)) continue;
      for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
        double expected = 0.0;
        for (const Successor& succ : mdp.successors(s, a)) expected += succ.prob * v[succ.state];
        next(s, a) = mdp.reward(s, a) + mdp.gamma() * expected;
        residual = std::max(residual, std::abs(next(s, a) - q(s, a)));
      }
    }
    q = std::move(next);
    if (residual <= tol) return q;
  }
  throw DivergedError("policy_evaluation did not converge");
}

GreedyPolicySet greedy_policies(const QTable& q, double tie_tol, std::size_t cap) {
  if (!(tie_tol >= 0.0)) throw InvalidArgument("greedy_policies: tie_tol must be >= 0");
  if (cap == 0) throw InvalidArgument("greedy_policies: cap must be positive");
  const std::size_t n_s = q.n_states();
  std::vector<std::vector<std::size_t>> ties(n_s);
  GreedyPolicySet out;
  out.total_count = 1;
  for (std::size_t s = 0; s < n_s; ++s) {
    auto row = q.row(s);
    const double best = *std::max_element(row.begin(), row.end());
    for (std::size_t a = 0; a < row.size(); ++a) {
      if (row[a] >= best - tie_tol) ties[s].push_back(a);
    }
    const std::size_t k = ties[s].size();
    if (out.total_count > std::numeric_limits<std::size_t>::max() / k) {
      out.total_count = std::numeric_limits<std::size_t>::max();
    } else if (out.total_count != std::numeric_limits<std::size_t>::max()) {
      out.total_count *= k;
    }
  }
  std::vector<std::size_t> digit(n_s, 0);
  std::vector<std::size_t> actions(n_s);
  while (true) {
    for (std::size_t s = 0; s < n_s; ++s) actions[s] = ties[s][digit[s]];
    out.policies.push_back(PolicyTable::deterministic(actions, q.n_actions()));
    if (out.policies.size() == cap) break;
    // Odometer increment, last state fastest.
    std::size_t s = n_s;
    while (s > 0) {
      --s;
      if (++digit[s] < ties[s].size()) break;
      digit[s] = 0;
      if (s == 0) return out;
    }
    if (n_s == 0) break;
  }
  out.truncated = out.total_count > out.policies.size();
  return out;
}

void validate_behavior(const BehaviorSpec& spec) {
  if (spec.kind == BehaviorSpec::Kind::kEpsGreedy) {
    if (!(spec.param >= 0.0 && spec.param <= 1.0)) {
      throw InvalidArgument("eps-greedy: epsilon must lie in [0, 1]");
    }
  } else if (!(std::abs(spec.param) >= kBoltzmannMinTemperature)) {
    std::ostringstream msg;
    msg << "Boltzmann: |t| = " << std::abs(spec.param) << " is below the minimum temperature "
        << kBoltzmannMinTemperature << "; the softmax would be numerically degenerate";
    throw InvalidArgument(msg.str());
  }
}

PolicyTable behavior_policy(const QTable& q, const BehaviorSpec& spec, TieBreak ties) {
  validate_behavior(spec);
  const std::size_t n_a = q.n_actions();
  std::vector<double> probs(q.n_states() * n_a, 0.0);
  for (std::size_t s = 0; s < q.n_states(); ++s) {
    auto row = q.row(s);
    double* out = probs.data() + s * n_a;
    if (spec.kind == BehaviorSpec::Kind::kEpsGreedy) {
      const double eps = spec.param;
      const double best = *std::max_element(row.begin(), row.end());
      std::vector<std::size_t> greedy;
      if (ties == TieBreak::kSplitEqually) {
        for (std::size_t a = 0; a < n_a; ++a) {
          if (row[a] == best) greedy.push_back(a);
        }
      } else {
        greedy.push_back(argmax_action(row));
      }
      for (std::size_t a = 0; a < n_a; ++a) out[a] = eps / static_cast<double>(n_a);
      for (std::size_t a : greedy) out[a] += (1.0 - eps) / static_cast<double>(greedy.size());
    } else {
      const double t = spec.param;
      double shift = -std::numeric_limits<double>::infinity();
      for (double v : row) shift = std::max(shift, v / t);
      double total = 0.0;
      for (std::size_t a = 0; a < n_a; ++a) {
        out[a] = std::exp(row[a] / t - shift);
        total += out[a];
      }
      for (std::size_t a = 0; a < n_a; ++a) out[a] /= total;
    }
  }
  return PolicyTable(q.n_states(), n_a, std::move(probs));
}

std::size_t sample_successor(const TabularMdp& mdp, std::size_t s, std::size_t a, Rng& rng) {
  auto row = mdp.successors(s, a);
  if (row.size() == 1) return row[0].state;
  const double u = rng.uniform();
  double acc = 0.0;
  for (const Successor& succ : row) {
    acc += succ.prob;
    if (u < acc) return succ.state;
  }
  return row.back().state;
}

DistributionSA occupancy_sa(const TabularMdp& mdp, const PolicyTable& policy, OccupancyMode mode,
                            std::size_t n_rollouts, std::uint64_t seed) {
  if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions()) {
    throw InvalidArgument("occupancy_sa: policy shape does not match the MDP");
  }
  std::vector<double> mass(mdp.n_pairs(), 0.0);
  if (mode == OccupancyMode::kDiscounted) {
    std::vector<double> state_prob(mdp.initial_dist().begin(), mdp.initial_dist().end());
    double weight = 1.0;
    for (int t = 0; t < mdp.episode_horizon() && weight >= 1e-10; ++t) {
      std::vector<double> next(mdp.n_states(), 0.0);
      for (std::size_t s = 0; s < mdp.n_states(); ++s) {
        // Episodes stop at terminal states, so they carry no occupancy.
        if (state_prob[s] == 0.0 || mdp.is_terminal(s)) continue;
        for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
          const double p_sa = state_prob[s] * policy(s, a);
          if (p_sa == 0.0) continue;
          mass[mdp.pair_index(s, a)] += weight * p_sa;
          for (const Successor& succ : mdp.successors(s, a)) next[succ.state] += p_sa * succ.prob;
        }
      }
      state_prob = std::move(next);
      weight *= mdp.gamma();
    }
  } else {
    if (n_rollouts == 0) throw InvalidArgument("occupancy_sa: n_rollouts must be >= 1");
    Rng rng(seed);
    for (std::size_t i = 0; i < n_rollouts; ++i) {
      run_tabular_episode(mdp, policy, rng,
                          [&](const TabularStep& st) { mass[mdp.pair_index(st.s, st.a)] += 1.0; });
    }
  }
  return DistributionSA::from_counts(mass);
}

}  // namespace rldd
