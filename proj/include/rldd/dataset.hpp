#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rldd/envs.hpp"
#include "rldd/mdp.hpp"

namespace rldd {

struct Transition {
  StateVec s{};
  std::size_t a = 0;
  double r = 0.0;
  StateVec s_next{};
  bool done = false;  // s_next is terminal; time-limit cuts are not done
};

struct DatasetSpec {
  std::string env_id;
  BehaviorSpec behavior;
  std::size_t size = 0;
  std::uint64_t seed = 0;
  bool coverage_enforced = false;
  std::size_t patches = 0;
  /// Patch budget used for continuous environments (0 for tabular).
  std::size_t coverage_budget = 0;
};

nlohmann::json to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const nlohmann::json& doc);
std::string behavior_name(const BehaviorSpec& spec);

struct Dataset {
  DatasetSpec spec;
  std::vector<Transition> transitions;

  std::size_t size() const { return transitions.size(); }
};

/// Runs full episodes of the behavior policy derived from q_star (rows are
/// tabular states or discretizer cells) until `size` transitions are
/// collected, then truncates. Greedy ties go to the lowest action index.
Dataset generate_dataset(const Environment& env, const QTable& q_star, const BehaviorSpec& behavior,
                         std::size_t size, std::uint64_t seed);

/// Patches every (cell, action) pair absent from the dataset with one
/// generatively sampled transition. Tabular: all missing pairs. Continuous:
/// missing pairs in index order up to min(missing, 2 * spec.size). Existing
/// transitions are kept as they are.
Dataset enforce_coverage(const Dataset& dataset, const Environment& env, std::uint64_t seed);

/// Visit counts over (cell, action), indexed cell * n_actions + a.
std::vector<double> pair_counts(const Dataset& dataset, const Environment& env);

// ─── d_pi* ──────────────────────────────────────────────────────────────────

/// Optimal deterministic policies, enumerated up to a cap. Tied optimal
/// actions whose successor rows are identical are interchangeable: they are
/// folded into one group (keyed by the lowest member) and the group choice is
/// resolved exactly when the distance is computed.
struct OptimalPolicySet {
  std::vector<std::vector<std::size_t>> actions;  // one action per cell, per policy
  std::vector<std::size_t> group_of;              // per pair: representative action
  std::size_t n_actions = 0;
  std::size_t total_count = 0;  // saturated product of per-state group counts
  bool truncated = false;
};

inline constexpr double kOptimalTieTolerance = 1e-9;

/// Tabular environments only (uses the MDP to fold interchangeable ties).
OptimalPolicySet optimal_policy_set(const Environment& env, const QTable& q_star,
                                    double tie_tol = kOptimalTieTolerance,
                                    std::size_t cap = kGreedyPolicyCap);

/// Plain set, no folding: for continuous environments or explicit policies.
OptimalPolicySet policy_set_from_tables(const std::vector<PolicyTable>& policies);

using SparseDist = std::vector<std::pair<std::size_t, double>>;

struct ReferenceOccupancy {
  std::vector<SparseDist> occupancies;  // episodic visitation over pairs, per policy
  std::vector<std::size_t> group_of;
  std::size_t n_pairs = 0;
  std::size_t n_actions = 0;
  std::size_t n_rollouts = 0;
  /// TV between the two halves of the first policy's rollouts.
  double sampling_error = 0.0;
};

inline constexpr std::size_t kReferenceRollouts = 200;

ReferenceOccupancy reference_occupancy(const Environment& env, const OptimalPolicySet& set,
                                       std::size_t n_rollouts, std::uint64_t seed);

/// min over policies of TV(mu, d_pi), with interchangeable groups resolved
/// per state.
double distance_to_reference(const std::vector<double>& mu, const ReferenceOccupancy& ref);

struct DatasetMetrics {
  double normalized_entropy = 0.0;
  double coverage = 0.0;
  double d_pi_star = 0.0;
  double d_pi_star_sampling_error = 0.0;
  std::size_t size = 0;
};

nlohmann::json to_json(const DatasetMetrics& m);

DatasetMetrics dataset_metrics(const Dataset& dataset, const Environment& env, const ReferenceOccupancy& ref);
DatasetMetrics dataset_metrics(const Dataset& dataset, const Environment& env,
                               const std::vector<PolicyTable>& optimal_policies, std::size_t n_ref_rollouts,
                               std::uint64_t seed);

// ─── Persistence ────────────────────────────────────────────────────────────

/// Writes <stem>.csv (%.17g, columns s*, a, r, sn*, done) and <stem>.json
/// (spec and, if given, metrics).
void save_dataset(const Dataset& dataset, const Environment& env, const std::string& stem,
                  const std::optional<DatasetMetrics>& metrics = std::nullopt);
Dataset load_dataset(const std::string& stem);

}  // namespace rldd
