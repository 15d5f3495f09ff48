// Command-line front end: rldd <subcommand> ...
// Exit codes: 0 ok, 1 usage or config error, 2 a training run diverged.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "rldd/approx.hpp"
#include "rldd/dataset.hpp"
#include "rldd/envs.hpp"
#include "rldd/errors.hpp"
#include "rldd/experiment.hpp"
#include "rldd/trainers.hpp"

namespace fs = std::filesystem;
using namespace rldd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitDiverged = 2;

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

ReferenceOccupancy reference_for(const Environment& env, const Reference& ref, std::uint64_t seed) {
  OptimalPolicySet set;
  if (env.is_tabular()) {
    set = optimal_policy_set(env, ref.q);
  } else {
    std::vector<std::size_t> actions(ref.q.n_states());
    for (std::size_t s = 0; s < actions.size(); ++s) actions[s] = argmax_action(ref.q.row(s));
    set = policy_set_from_tables({PolicyTable::deterministic(actions, ref.q.n_actions())});
  }
  return reference_occupancy(env, set, kReferenceRollouts, seed);
}

BehaviorSpec parse_behavior(const std::string& policy, double param) {
  BehaviorSpec b;
  if (policy == "eps_greedy") {
    b = BehaviorSpec::eps_greedy(param);
  } else if (policy == "boltzmann") {
    b = BehaviorSpec::boltzmann(param);
  } else {
    throw InvalidArgument("--policy must be eps_greedy or boltzmann");
  }
  validate_behavior(b);
  return b;
}

// ─── Subcommands ────────────────────────────────────────────────────────────

int cmd_solve(const std::string& env_id, std::uint64_t feature_seed, std::uint64_t seed, const std::string& out) {
  auto env = make_env(env_id, feature_seed);
  const Reference ref = compute_reference(*env, seed);
  const fs::path dir = resolve_output_dir(out.empty() ? "solve/" + env_id : out);
  fs::create_directories(dir);
  std::FILE* f = std::fopen((dir / "q.csv").string().c_str(), "w");
  if (f == nullptr) throw InvalidArgument("cannot write " + (dir / "q.csv").string());
  std::fprintf(f, "cell");
  for (std::size_t a = 0; a < ref.q.n_actions(); ++a) std::fprintf(f, ",q_a%zu", a);
  std::fprintf(f, "\n");
  for (std::size_t s = 0; s < ref.q.n_states(); ++s) {
    std::fprintf(f, "%zu", s);
    for (double v : ref.q.row(s)) std::fprintf(f, ",%.17g", v);
    std::fprintf(f, "\n");
  }
  std::fclose(f);
  const nlohmann::json summary{{"env", env_id},
                               {"n_cells", ref.q.n_states()},
                               {"n_actions", ref.q.n_actions()},
                               {"r_opt", ref.r_opt},
                               {"r_rand", ref.r_rand},
                               {"n_baseline_episodes", ref.n_baseline_episodes}};
  write_json_file(dir / "reference.json", summary);
  std::cout << summary.dump(2) << "\nwrote " << (dir / "q.csv").string() << '\n';
  return kExitOk;
}

int cmd_gen_dataset(const std::string& env_id, const std::string& policy, double param, std::size_t size,
                    bool coverage, std::uint64_t seed, std::uint64_t feature_seed, const std::string& out) {
  if (size == 0) throw InvalidArgument("--size must be positive");
  const BehaviorSpec behavior = parse_behavior(policy, param);
  auto env = make_env(env_id, feature_seed);
  const Reference ref = compute_reference(*env, derive_seed(seed, {0x5EF}));
  Dataset ds = generate_dataset(*env, ref.q, behavior, size, derive_seed(seed, {0xDA7A}));
  if (coverage) ds = enforce_coverage(ds, *env, derive_seed(seed, {0xC0FE}));
  const auto occ = reference_for(*env, ref, derive_seed(seed, {0x0CC}));
  const DatasetMetrics m = dataset_metrics(ds, *env, occ);
  std::string stem = out;
  if (stem.empty()) {
    char name[128];
    std::snprintf(name, sizeof name, "%s_%g_n%zu_cov%d_s%llu", policy.c_str(), param, size, coverage ? 1 : 0,
                  static_cast<unsigned long long>(seed));
    stem = "datasets/" + env_id + "/" + name;
  }
  const fs::path path = resolve_output_dir(stem);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_dataset(ds, *env, path.string(), m);
  std::cout << to_json(m).dump(2) << "\nwrote " << path.string() << ".csv\n";
  return kExitOk;
}

int cmd_train(const std::string& algo, const std::string& dataset_stem, const std::string& config_path,
              std::uint64_t seed, std::uint64_t feature_seed, const std::string& out) {
  if (algo != "dqn" && algo != "cql") throw InvalidArgument("algorithm must be dqn or cql");
  const Dataset ds = load_dataset(dataset_stem);
  auto env = make_env(ds.spec.env_id, feature_seed);
  TrainConfig cfg = default_train_config(ds.spec.env_id);
  if (!config_path.empty()) cfg = apply_overrides(cfg, read_json_file(config_path));
  cfg.seed = seed;
  const Reference ref = compute_reference(*env, derive_seed(seed, {0x5EF}));
  const Evaluator evaluator(*env, &ref);
  const FeatureEncoder encoder(*env);
  auto net = make_network(*env, cfg, derive_seed(seed, {0x1E7}));
  const RunResult r = algo == "dqn" ? offline_dqn(ds, encoder, *net, cfg, &evaluator)
                                    : offline_cql(ds, encoder, *net, cfg, &evaluator);
  const fs::path dir = resolve_output_dir(out.empty() ? "train/" + ds.spec.env_id + "_" + algo : out);
  fs::create_directories(dir);
  nlohmann::json doc = to_json(r);
  doc["env"] = ds.spec.env_id;
  doc["seed"] = seed;
  doc["dataset"] = to_json(ds.spec);
  doc["train_config"] = to_json(cfg);
  write_json_file(dir / "result.json", doc);
  write_series_csv(r, (dir / "series.csv").string());
  save_checkpoint(*net, (dir / "checkpoint").string());
  std::printf("final normalized reward %.6g (return %.6g) after %zu steps\n", r.final_eval.normalized_return,
              r.final_eval.mean_return, r.steps_completed);
  if (r.diverged) {
    std::fprintf(stderr, "diverged: %s\n", r.divergence_message.c_str());
    return kExitDiverged;
  }
  return kExitOk;
}

int cmd_sweep(const std::string& path, const std::string& output_dir, std::size_t threads) {
  ExperimentConfig cfg = experiment_config_from_json(read_json_file(path));
  if (!output_dir.empty()) cfg.output_dir = output_dir;
  if (threads > 0) cfg.threads = threads;
  const ExperimentSummary s = run_experiment(cfg);
  std::printf("%s: %zu points, %zu runs, %zu diverged, %zu failures\n", s.directory.c_str(), s.n_points, s.n_runs,
              s.n_diverged, s.failures.size());
  for (const auto& f : s.failures) std::fprintf(stderr, "failure: %s\n", f.c_str());
  if (s.n_diverged > 0) return kExitDiverged;
  return s.failures.empty() ? kExitOk : kExitUsage;
}

int cmd_fourstate(const std::string& mode, const std::vector<double>& alphas, double q_step, std::size_t episodes,
                  std::size_t record_every, std::uint64_t seed, const std::string& out) {
  const fs::path dir = resolve_output_dir(out.empty() ? "fourstate_" + mode : out);
  if (mode == "sweep") {
    write_fourstate_sweep(dir.string(), alphas, q_step);
  } else {
    write_fourstate_online(dir.string(), default_online_study(episodes, seed), record_every);
  }
  for (const auto& f : report(dir.string())) std::cout << "wrote " << f << '\n';
  return kExitOk;
}

int cmd_metrics(const std::string& stem, std::uint64_t feature_seed, std::uint64_t seed) {
  const Dataset ds = load_dataset(stem);
  auto env = make_env(ds.spec.env_id, feature_seed);
  const Reference ref = compute_reference(*env, derive_seed(seed, {0x5EF}));
  const DatasetMetrics m = dataset_metrics(ds, *env, reference_for(*env, ref, derive_seed(seed, {0x0CC})));
  std::cout << to_json(m).dump(2) << '\n';
  return kExitOk;
}

int cmd_report(const std::string& dir) {
  const std::string path = fs::is_directory(dir) ? dir : resolve_output_dir(dir);
  for (const auto& f : report(path)) std::cout << "wrote " << f << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline RL data-distribution toolkit. Relative output paths go under $RLDD_OUTPUT_ROOT "
               "(default ./results)."};
  app.require_subcommand(1);
  std::uint64_t feature_seed = 0, seed = 0;
  std::string out;
  int rc = kExitOk;

  auto* solve = app.add_subcommand("solve", "Reference Q and return baselines for an environment");
  std::string env_id;
  solve->add_option("env", env_id, "Environment id")->required();
  solve->add_option("--out", out, "Output directory");
  solve->add_option("--seed", seed, "Seed for baseline rollouts");
  solve->add_option("--feature-seed", feature_seed, "Seed of the tabular feature map");

  auto* gen = app.add_subcommand("gen-dataset", "Generate an offline dataset");
  std::string policy = "eps_greedy";
  double param = 0.0;
  std::size_t size = 0;
  bool coverage = false;
  gen->add_option("env", env_id, "Environment id")->required();
  gen->add_option("--policy", policy, "eps_greedy or boltzmann")->required();
  gen->add_option("--param", param, "Epsilon or temperature")->required();
  gen->add_option("--size", size, "Number of transitions")->required();
  gen->add_flag("--coverage", coverage, "Patch every missing (state, action) pair");
  gen->add_option("--seed", seed, "Dataset seed");
  gen->add_option("--feature-seed", feature_seed, "Seed of the tabular feature map");
  gen->add_option("--out", out, "Output stem (without extension)");

  auto* train = app.add_subcommand("train", "Train DQN or CQL on a dataset");
  std::string algo, dataset, config;
  train->add_option("algo", algo, "dqn or cql")->required();
  train->add_option("--dataset", dataset, "Dataset stem")->required();
  train->add_option("--config", config, "JSON file with TrainConfig overrides");
  train->add_option("--seed", seed, "Run seed");
  train->add_option("--feature-seed", feature_seed, "Seed of the tabular feature map");
  train->add_option("--out", out, "Output directory");

  auto* sweep = app.add_subcommand("sweep", "Run an experiment config");
  std::string experiment;
  std::size_t threads = 0;
  sweep->add_option("experiment", experiment, "Experiment JSON")->required();
  sweep->add_option("--out", out, "Override the output directory");
  sweep->add_option("--threads", threads, "Worker threads");

  auto* fourstate = app.add_subcommand("fourstate", "Four-state MDP studies");
  std::string fs_mode;
  std::vector<double> alphas{1.0, 1.1, 1.2, 1.25, 1.3, 1.4};
  double q_step = 0.005;
  std::size_t episodes = 200000, record_every = 100;
  fourstate->add_option("mode", fs_mode, "sweep or online")->required()->check(CLI::IsMember({"sweep", "online"}));
  fourstate->add_option("--alphas", alphas, "Alpha grid (sweep)");
  fourstate->add_option("--q-step", q_step, "q grid step (sweep)");
  fourstate->add_option("--episodes", episodes, "Episodes per run (online)");
  fourstate->add_option("--record-every", record_every, "Record every n-th episode (online)");
  fourstate->add_option("--seed", seed, "Seed (online)");
  fourstate->add_option("--out", out, "Output directory");

  auto* metrics = app.add_subcommand("metrics", "Entropy, coverage and d_pi* of a dataset");
  metrics->add_option("dataset", dataset, "Dataset stem")->required();
  metrics->add_option("--seed", seed, "Seed for the reference rollouts");
  metrics->add_option("--feature-seed", feature_seed, "Seed of the tabular feature map");

  auto* rep = app.add_subcommand("report", "Aggregate an experiment directory into figure CSVs");
  std::string report_dir;
  rep->add_option("dir", report_dir, "Experiment directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*solve) rc = cmd_solve(env_id, feature_seed, seed, out);
    if (*gen) rc = cmd_gen_dataset(env_id, policy, param, size, coverage, seed, feature_seed, out);
    if (*train) rc = cmd_train(algo, dataset, config, seed, feature_seed, out);
    if (*sweep) rc = cmd_sweep(experiment, out, threads);
    if (*fourstate) rc = cmd_fourstate(fs_mode, alphas, q_step, episodes, record_every, seed, out);
    if (*metrics) rc = cmd_metrics(dataset, feature_seed, seed);
    if (*rep) rc = cmd_report(report_dir);
  } catch (const DivergedError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return rc;
}
