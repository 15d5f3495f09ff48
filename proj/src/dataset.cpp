#include "rldd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "rldd/dist_metrics.hpp"
#include "rldd/errors.hpp"

namespace rldd {

std::string behavior_name(const BehaviorSpec& spec) {
  return spec.kind == BehaviorSpec::Kind::kEpsGreedy ? "eps_greedy" : "boltzmann";
}

nlohmann::json to_json(const DatasetSpec& spec) {
  return {{"env_id", spec.env_id},
          {"policy", behavior_name(spec.behavior)},
          {"param", spec.behavior.param},
          {"size", spec.size},
          {"seed", spec.seed},
          {"coverage_enforced", spec.coverage_enforced},
          {"patches", spec.patches},
          {"coverage_budget", spec.coverage_budget}};
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& doc) {
  DatasetSpec spec;
  spec.env_id = doc.at("env_id").get<std::string>();
  const auto policy = doc.at("policy").get<std::string>();
  if (policy == "eps_greedy") {
    spec.behavior = BehaviorSpec::eps_greedy(doc.at("param").get<double>());
  } else if (policy == "boltzmann") {
    spec.behavior = BehaviorSpec::boltzmann(doc.at("param").get<double>());
  } else {
    throw InvalidArgument("unknown policy kind '" + policy + "'");
  }
  spec.size = doc.at("size").get<std::size_t>();
  spec.seed = doc.at("seed").get<std::uint64_t>();
  spec.coverage_enforced = doc.value("coverage_enforced", false);
  spec.patches = doc.value("patches", std::size_t{0});
  spec.coverage_budget = doc.value("coverage_budget", std::size_t{0});
  return spec;
}

Dataset generate_dataset(const Environment& env, const QTable& q_star, const BehaviorSpec& behavior,
                         std::size_t size, std::uint64_t seed) {
  validate_behavior(behavior);
  if (size == 0) throw InvalidArgument("generate_dataset: size must be >= 1");
  if (q_star.n_states() < env.n_cells() || q_star.n_actions() != env.n_actions()) {
    throw InvalidArgument("generate_dataset: q_star shape does not cover the environment");
  }
  const PolicyTable policy = behavior_policy(q_star, behavior, TieBreak::kLowestIndex);

  Dataset out;
  out.spec.env_id = env.id();
  out.spec.behavior = behavior;
  out.spec.size = size;
  out.spec.seed = seed;
  out.transitions.reserve(size);
  Rng rng(seed);
  while (out.transitions.size() < size) {
    StateVec s = env.sample_initial(rng);
    for (int t = 0; t < env.horizon() && out.transitions.size() < size; ++t) {
      const std::size_t a = rng.categorical(policy.row(env.cell_of(s)));
      const StepResult step = env.step(s, a, rng);
      out.transitions.push_back({s, a, step.reward, step.next, step.terminal});
      if (step.terminal) break;
      s = step.next;
    }
  }
  return out;
}

std::vector<double> pair_counts(const Dataset& dataset, const Environment& env) {
  const std::size_t n_a = env.n_actions();
  std::vector<double> counts(env.n_cells() * n_a, 0.0);
  for (const Transition& tr : dataset.transitions) counts[env.cell_of(tr.s) * n_a + tr.a] += 1.0;
  return counts;
}

Dataset enforce_coverage(const Dataset& dataset, const Environment& env, std::uint64_t seed) {
  if (!env.has_generative_access()) {
    throw UnsupportedError("enforce_coverage: environment '" + env.id() + "' has no generative access");
  }
  const std::size_t n_a = env.n_actions();
  const auto counts = pair_counts(dataset, env);
  std::vector<std::size_t> missing;
  for (std::size_t p = 0; p < counts.size(); ++p) {
    if (counts[p] == 0.0) missing.push_back(p);
  }
  std::size_t budget = missing.size();
  if (!env.is_tabular()) budget = std::min(missing.size(), 2 * dataset.spec.size);

  Dataset out = dataset;
  out.spec.coverage_enforced = true;
  out.spec.coverage_budget = env.is_tabular() ? 0 : 2 * dataset.spec.size;
  Rng rng(seed);
  for (std::size_t i = 0; i < budget; ++i) {
    const std::size_t cell = missing[i] / n_a, a = missing[i] % n_a;
    const StateVec s = env.sample_in_cell(cell, rng);
    const StepResult step = env.step(s, a, rng);
    out.transitions.push_back({s, a, step.reward, step.next, step.terminal});
  }
  out.spec.patches = dataset.spec.patches + budget;
  return out;
}

// ─── Optimal policy sets and reference occupancies ──────────────────────────

namespace {

bool same_row(const TabularMdp& mdp, std::size_t s, std::size_t a, std::size_t b) {
  if (mdp.reward(s, a) != mdp.reward(s, b)) return false;
  const auto ra = mdp.successors(s, a), rb = mdp.successors(s, b);
  if (ra.size() != rb.size()) return false;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    if (ra[i].state != rb[i].state || ra[i].prob != rb[i].prob) return false;
  }
  return true;
}

std::size_t saturating_mul(std::size_t a, std::size_t b) {
  if (a != 0 && b > std::numeric_limits<std::size_t>::max() / a) return std::numeric_limits<std::size_t>::max();
  return a * b;
}

}  // namespace

OptimalPolicySet optimal_policy_set(const Environment& env, const QTable& q_star, double tie_tol,
                                    std::size_t cap) {
  const TabularMdp* mdp = env.tabular_mdp();
  if (mdp == nullptr) throw UnsupportedError("optimal_policy_set: needs a tabular environment");
  if (q_star.n_states() != mdp->n_states() || q_star.n_actions() != mdp->n_actions()) {
    throw InvalidArgument("optimal_policy_set: q_star shape mismatch");
  }
  if (cap == 0) throw InvalidArgument("optimal_policy_set: cap must be positive");
  const std::size_t n_s = mdp->n_states(), n_a = mdp->n_actions();

  OptimalPolicySet out;
  out.n_actions = n_a;
  out.group_of.resize(n_s * n_a);
  std::vector<std::vector<std::size_t>> choices(n_s);  // group representatives per state
  for (std::size_t s = 0; s < n_s; ++s) {
    const auto row = q_star.row(s);
    const double best = *std::max_element(row.begin(), row.end());
    const double tol = tie_tol * std::max(1.0, std::abs(best));
    for (std::size_t a = 0; a < n_a; ++a) {
      out.group_of[s * n_a + a] = a;
      if (row[a] < best - tol) continue;
      bool folded = false;
      for (std::size_t rep : choices[s]) {
        if (same_row(*mdp, s, rep, a)) {
          out.group_of[s * n_a + a] = rep;
          folded = true;
          break;
        }
      }
      if (!folded) choices[s].push_back(a);
    }
  }

  // States no optimal policy can reach keep their first choice.
  std::vector<bool> reachable(n_s, false);
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < n_s; ++s) {
    if (mdp->initial_dist()[s] > 0.0) {
      reachable[s] = true;
      stack.push_back(s);
    }
  }
  while (!stack.empty()) {
    const std::size_t s = stack.back();
    stack.pop_back();
    for (std::size_t a : choices[s]) {
      for (const Successor& succ : mdp->successors(s, a)) {
        if (!reachable[succ.state]) {
          reachable[succ.state] = true;
          stack.push_back(succ.state);
        }
      }
    }
  }
  for (std::size_t s = 0; s < n_s; ++s) {
    if (!reachable[s]) choices[s].resize(1);
  }

  out.total_count = 1;
  for (const auto& c : choices) out.total_count = saturating_mul(out.total_count, c.size());
  std::vector<std::size_t> digit(n_s, 0);
  std::vector<std::size_t> actions(n_s);
  bool done = false;
  while (!done && out.actions.size() < cap) {
    for (std::size_t s = 0; s < n_s; ++s) actions[s] = choices[s][digit[s]];
    out.actions.push_back(actions);
    done = true;
    for (std::size_t s = n_s; s-- > 0;) {
      if (++digit[s] < choices[s].size()) {
        done = false;
        break;
      }
      digit[s] = 0;
    }
  }
  out.truncated = out.total_count > out.actions.size();
  return out;
}

OptimalPolicySet policy_set_from_tables(const std::vector<PolicyTable>& policies) {
  if (policies.empty()) throw InvalidArgument("policy_set_from_tables: need at least one policy");
  OptimalPolicySet out;
  out.n_actions = policies.front().n_actions();
  const std::size_t n_s = policies.front().n_states();
  out.group_of.resize(n_s * out.n_actions);
  for (std::size_t p = 0; p < out.group_of.size(); ++p) out.group_of[p] = p % out.n_actions;
  for (const PolicyTable& pi : policies) {
    if (pi.n_states() != n_s || pi.n_actions() != out.n_actions) {
      throw InvalidArgument("policy_set_from_tables: shape mismatch");
    }
    std::vector<std::size_t> actions(n_s);
    for (std::size_t s = 0; s < n_s; ++s) {
      const auto row = pi.row(s);
      const auto it = std::find(row.begin(), row.end(), 1.0);
      if (it == row.end()) throw InvalidArgument("policy_set_from_tables: policies must be deterministic");
      actions[s] = static_cast<std::size_t>(it - row.begin());
    }
    out.actions.push_back(std::move(actions));
  }
  out.total_count = out.actions.size();
  return out;
}

namespace {

SparseDist normalize_sparse(const std::vector<double>& counts) {
  double total = 0.0;
  for (double c : counts) total += c;
  SparseDist out;
  if (total == 0.0) return out;
  for (std::size_t p = 0; p < counts.size(); ++p) {
    if (counts[p] > 0.0) out.emplace_back(p, counts[p] / total);
  }
  return out;
}

}  // namespace

ReferenceOccupancy reference_occupancy(const Environment& env, const OptimalPolicySet& set,
                                       std::size_t n_rollouts, std::uint64_t seed) {
  if (set.actions.empty()) throw InvalidArgument("reference_occupancy: empty policy set");
  if (n_rollouts == 0) throw InvalidArgument("reference_occupancy: n_rollouts must be >= 1");
  const std::size_t n_a = env.n_actions();
  if (set.n_actions != n_a || set.actions.front().size() < env.n_cells()) {
    throw InvalidArgument("reference_occupancy: policy set does not match the environment");
  }
  ReferenceOccupancy ref;
  ref.group_of = set.group_of;
  ref.group_of.resize(env.n_cells() * n_a);
  ref.n_pairs = env.n_cells() * n_a;
  ref.n_actions = n_a;
  ref.n_rollouts = n_rollouts;

  std::vector<double> counts(ref.n_pairs), first_half(ref.n_pairs);
  Rng rng(seed);
  for (std::size_t k = 0; k < set.actions.size(); ++k) {
    const auto& actions = set.actions[k];
    std::fill(counts.begin(), counts.end(), 0.0);
    for (std::size_t i = 0; i < n_rollouts; ++i) {
      if (k == 0 && i == n_rollouts / 2) first_half = counts;
      rollout_return(env, rng, [&](const StateVec& s) {
        const std::size_t cell = env.cell_of(s);
        counts[cell * n_a + actions[cell]] += 1.0;
        return actions[cell];
      });
    }
    if (k == 0 && n_rollouts >= 2) {
      std::vector<double> second_half(ref.n_pairs);
      for (std::size_t p = 0; p < ref.n_pairs; ++p) second_half[p] = counts[p] - first_half[p];
      const auto a = DistributionSA::from_counts(first_half).probs();
      const auto b = DistributionSA::from_counts(second_half).probs();
      ref.sampling_error = total_variation(a, b);
    }
    ref.occupancies.push_back(normalize_sparse(counts));
  }
  return ref;
}

double distance_to_reference(const std::vector<double>& mu, const ReferenceOccupancy& ref) {
  if (mu.size() != ref.n_pairs) throw InvalidArgument("distance_to_reference: size mismatch");
  double mu_total = 0.0;
  for (double v : mu) mu_total += v;
  double best = std::numeric_limits<double>::infinity();
  for (const SparseDist& d : ref.occupancies) {
    // 2 TV = sum_p mu(p) + sum over reference mass of the cheapest member swap.
    double sum = mu_total;
    for (const auto& [pair, mass] : d) {
      const std::size_t rep = ref.group_of[pair];
      const std::size_t n_act = ref.n_actions;
      const std::size_t base = pair - pair % n_act;  // first pair of the same cell
      double adjust = std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < n_act; ++a) {
        if (ref.group_of[base + a] != rep) continue;
        const double m = mu[base + a];
        adjust = std::min(adjust, std::abs(m - mass) - m);
      }
      sum += adjust;
    }
    best = std::min(best, 0.5 * sum);
  }
  return std::clamp(best, 0.0, 1.0);
}

nlohmann::json to_json(const DatasetMetrics& m) {
  return {{"normalized_entropy", m.normalized_entropy},
          {"coverage", m.coverage},
          {"d_pi_star", m.d_pi_star},
          {"d_pi_star_sampling_error", m.d_pi_star_sampling_error},
          {"size", m.size}};
}

DatasetMetrics dataset_metrics(const Dataset& dataset, const Environment& env, const ReferenceOccupancy& ref) {
  if (dataset.transitions.empty()) throw InvalidArgument("dataset_metrics: empty dataset");
  const auto counts = pair_counts(dataset, env);
  const DistributionSA mu = DistributionSA::from_counts(counts);
  DatasetMetrics m;
  m.size = dataset.size();
  m.normalized_entropy = entropy(mu).normalized;
  m.coverage = coverage(counts);
  m.d_pi_star = distance_to_reference(mu.probs(), ref);
  m.d_pi_star_sampling_error = ref.sampling_error;
  return m;
}

DatasetMetrics dataset_metrics(const Dataset& dataset, const Environment& env,
                               const std::vector<PolicyTable>& optimal_policies, std::size_t n_ref_rollouts,
                               std::uint64_t seed) {
  const auto ref = reference_occupancy(env, policy_set_from_tables(optimal_policies), n_ref_rollouts, seed);
  return dataset_metrics(dataset, env, ref);
}

// ─── Persistence ────────────────────────────────────────────────────────────

void save_dataset(const Dataset& dataset, const Environment& env, const std::string& stem,
                  const std::optional<DatasetMetrics>& metrics) {
  const std::size_t dim = env.state_dim();
  std::FILE* f = std::fopen((stem + ".csv").c_str(), "w");
  if (f == nullptr) throw InvalidArgument("cannot write " + stem + ".csv");
  auto header = [&](const char* prefix) {
    if (dim == 1) {
      std::fprintf(f, "%s", prefix);
    } else {
      for (std::size_t d = 0; d < dim; ++d) std::fprintf(f, "%s%s%zu", d ? "," : "", prefix, d);
    }
  };
  header("s");
  std::fprintf(f, ",a,r,");
  header("sn");
  std::fprintf(f, ",done\n");
  for (const Transition& tr : dataset.transitions) {
    for (std::size_t d = 0; d < dim; ++d) std::fprintf(f, "%s%.17g", d ? "," : "", tr.s[d]);
    std::fprintf(f, ",%zu,%.17g", tr.a, tr.r);
    for (std::size_t d = 0; d < dim; ++d) std::fprintf(f, ",%.17g", tr.s_next[d]);
    std::fprintf(f, ",%d\n", tr.done ? 1 : 0);
  }
  std::fclose(f);

  nlohmann::json side{{"spec", to_json(dataset.spec)}, {"state_dim", dim}, {"n_transitions", dataset.size()}};
  if (metrics) side["metrics"] = to_json(*metrics);
  std::ofstream(stem + ".json") << side.dump(2) << '\n';
}

Dataset load_dataset(const std::string& stem) {
  std::ifstream side_in(stem + ".json");
  if (!side_in) throw InvalidArgument("cannot open " + stem + ".json");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(side_in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(stem + ".json: " + e.what());
  }
  Dataset out;
  out.spec = dataset_spec_from_json(side.at("spec"));
  const auto dim = side.at("state_dim").get<std::size_t>();
  if (dim == 0 || dim > 4) throw InvalidArgument(stem + ".json: bad state_dim");

  std::ifstream in(stem + ".csv");
  if (!in) throw InvalidArgument("cannot open " + stem + ".csv");
  std::string line;
  std::getline(in, line);  // header
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(std::strtod(cell.c_str(), nullptr));
    if (cols.size() != 2 * dim + 3) {
      throw InvalidArgument(stem + ".csv line " + std::to_string(line_no) + ": wrong column count");
    }
    Transition tr;
    for (std::size_t d = 0; d < dim; ++d) tr.s[d] = cols[d];
    tr.a = static_cast<std::size_t>(cols[dim]);
    tr.r = cols[dim + 1];
    for (std::size_t d = 0; d < dim; ++d) tr.s_next[d] = cols[dim + 2 + d];
    tr.done = cols[2 * dim + 2] != 0.0;
    out.transitions.push_back(tr);
  }
  return out;
}

}  // namespace rldd
