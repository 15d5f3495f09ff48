#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rldd/dataset.hpp"
#include "rldd/dist_metrics.hpp"
#include "rldd/four_state.hpp"
#include "rldd/trainers.hpp"

namespace rldd {

/// Output root for relative paths: $RLDD_OUTPUT_ROOT if set, else "results".
std::string output_root();
/// Absolute paths pass through; relative ones are joined to output_root().
std::string resolve_output_dir(const std::string& dir);

enum class Profile { kDesk, kPaper };

/// Desk profile divides learning steps, dataset size and target period by 10.
TrainConfig profile_train_config(const std::string& env_id, Profile profile);

struct PolicyPoint {
  BehaviorSpec behavior;
  std::string label() const;
};

struct ExperimentConfig {
  std::string kind = "offline";  // offline | fourstate_sweep | fourstate_online | dirichlet | concentrability
  std::string env_id = "grid1";
  Profile profile = Profile::kDesk;
  std::vector<PolicyPoint> policies;
  std::vector<bool> coverage{false, true};
  std::vector<std::string> algorithms{"dqn", "cql"};
  nlohmann::json train_overrides = nlohmann::json::object();
  std::size_t n_runs = 4;
  std::size_t n_eval_rollouts = 5;
  std::uint64_t seed_root = 0;
  std::uint64_t feature_seed = 0;
  std::string output_dir = "experiment";
  std::size_t threads = 1;
  /// Study-specific settings for the non-offline kinds, passed through.
  nlohmann::json params = nlohmann::json::object();
};

/// Study grids: eps in {0, 0.1, ..., 1}; t in +-{0.01, 0.1, 0.5, 1, 2, 5, 10}.
std::vector<double> default_epsilon_grid();
std::vector<double> default_temperature_grid();

/// Parses and validates. Missing "policies" means the default study grids.
ExperimentConfig experiment_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ExperimentConfig& cfg);

struct ExperimentSummary {
  std::string directory;
  std::size_t n_points = 0;
  std::size_t n_runs = 0;
  std::size_t n_diverged = 0;
  std::vector<std::string> failures;  // per grid point, experiment continued
};

/// Runs the configured study and writes per-run files plus aggregates (via
/// report) under the resolved output directory.
ExperimentSummary run_experiment(const ExperimentConfig& config);

/// Aggregated row for one (dataset point, algorithm).
struct PointRow {
  std::string env;
  std::string algorithm;
  std::string policy;
  double param = 0.0;
  bool coverage_enforced = false;
  double normalized_entropy = 0.0;
  double coverage = 0.0;
  double d_pi_star = 0.0;
  double mean_norm_reward = 0.0;
  double std_norm_reward = 0.0;
  double mean_q_error = 0.0;
  std::size_t n_runs = 0;
  std::size_t n_diverged = 0;
};

/// Recomputes PointRows from the per-run files under dir (sorted order).
std::vector<PointRow> collect_points(const std::string& dir);

/// Writes one CSV per figure analog into <dir>/report/. Byte-identical on
/// re-runs. Throws InvalidArgument if dir holds no experiment data.
std::vector<std::string> report(const std::string& dir);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// ─── Non-offline studies (also reachable through the CLI) ───────────────────

/// Writes fourstate_sweep.csv (alpha,q,mode,correct_actions) into dir.
void write_fourstate_sweep(const std::string& dir, const std::vector<double>& alphas, double q_step);

struct OnlineStudyRun {
  std::string label;
  four_state::OnlineConfig config;
};

/// Default online runs: uniform synthetic, eps = 1 unlimited, and eps = 0.05
/// with capacities 10000, 50000 and unlimited.
std::vector<OnlineStudyRun> default_online_study(std::size_t episodes, std::uint64_t seed);

/// Writes fourstate_online/<label>.csv per run.
void write_fourstate_online(const std::string& dir, const std::vector<OnlineStudyRun>& runs,
                            std::size_t record_every);

/// Writes dirichlet_raw.csv.
void write_dirichlet_study(const std::string& dir, const DirichletConfig& config);

}  // namespace rldd
