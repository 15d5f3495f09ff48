#include "rldd/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "rldd/errors.hpp"
#include "rldd/rng.hpp"

namespace fs = std::filesystem;

namespace rldd {

namespace {

constexpr const char* kClipHeader = "# normalized reward clipped to [-0.1, 1.1]\n";

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// FNV-1a; stable across builds, unlike std::hash.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

std::FILE* open_write(const fs::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (f == nullptr) throw InvalidArgument("cannot write " + path.string());
  return f;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InvalidArgument("csv: missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Comment lines (#) are skipped; the first other line is the header.
CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      t.header = split_csv_line(line);
      have_header = true;
    } else {
      t.rows.push_back(split_csv_line(line));
    }
  }
  return t;
}

void write_csv(const fs::path& path, const CsvTable& t, bool clip_note) {
  std::FILE* f = open_write(path);
  if (clip_note) std::fputs(kClipHeader, f);
  auto put = [f](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) std::fputc(',', f);
      std::fputs(cells[i].c_str(), f);
    }
    std::fputc('\n', f);
  };
  put(t.header);
  for (const auto& r : t.rows) put(r);
  std::fclose(f);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for fewer than two values.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

BehaviorSpec behavior_from_json(const nlohmann::json& p) {
  const std::string kind = p.at("policy").get<std::string>();
  const double param = p.at("param").get<double>();
  BehaviorSpec b;
  if (kind == "eps_greedy") {
    b = BehaviorSpec::eps_greedy(param);
  } else if (kind == "boltzmann") {
    b = BehaviorSpec::boltzmann(param);
  } else {
    throw InvalidArgument("unknown policy kind '" + kind + "'");
  }
  validate_behavior(b);
  return b;
}

const char* kKinds[] = {"offline", "fourstate_sweep", "fourstate_online", "dirichlet", "concentrability"};

}  // namespace

// ─── Paths and presets ──────────────────────────────────────────────────────

std::string output_root() {
  if (const char* env = std::getenv("RLDD_OUTPUT_ROOT"); env != nullptr && *env != '\0') return env;
  return "results";
}

std::string resolve_output_dir(const std::string& dir) {
  if (dir.empty()) throw InvalidArgument("output directory is empty");
  fs::path p(dir);
  if (p.is_absolute()) return p.string();
  return (fs::path(output_root()) / p).string();
}

TrainConfig profile_train_config(const std::string& env_id, Profile profile) {
  TrainConfig cfg = default_train_config(env_id);
  if (profile == Profile::kDesk) {
    cfg.learning_steps = std::max<std::size_t>(1, cfg.learning_steps / 10);
    cfg.dataset_size = std::max<std::size_t>(1, cfg.dataset_size / 10);
    // Keeps the number of target syncs per run unchanged.
    cfg.target_update_period = std::max<std::size_t>(1, cfg.target_update_period / 10);
  }
  return cfg;
}

std::string PolicyPoint::label() const { return behavior_name(behavior) + "_" + short_num(behavior.param); }

std::vector<double> default_epsilon_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
  return g;
}

std::vector<double> default_temperature_grid() {
  const double mags[] = {0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0};
  std::vector<double> g;
  for (double m : mags) g.push_back(m);
  for (double m : mags) g.push_back(-m);
  return g;
}

// ─── Config ─────────────────────────────────────────────────────────────────

ExperimentConfig experiment_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw InvalidArgument("experiment config must be a JSON object");
  static const char* known[] = {"kind", "env", "profile", "policies", "coverage", "algorithms", "train",
                                "n_runs", "n_eval_rollouts", "seed_root", "feature_seed", "output_dir",
                                "threads", "params"};
  for (const auto& [key, _] : doc.items()) {
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) ==
        std::end(known)) {
      throw InvalidArgument("experiment config: unknown key '" + key + "'");
    }
  }
  ExperimentConfig cfg;
  try {
    cfg.kind = doc.value("kind", cfg.kind);
    cfg.env_id = doc.value("env", cfg.env_id);
    const std::string profile = doc.value("profile", std::string("desk"));
    if (profile == "desk") {
      cfg.profile = Profile::kDesk;
    } else if (profile == "paper") {
      cfg.profile = Profile::kPaper;
    } else {
      throw InvalidArgument("profile must be 'desk' or 'paper'");
    }
    if (doc.contains("policies")) {
      for (const auto& p : doc.at("policies")) {
        if (p.contains("params")) {
          for (const auto& v : p.at("params")) {
            cfg.policies.push_back({behavior_from_json({{"policy", p.at("policy")}, {"param", v}})});
          }
        } else {
          cfg.policies.push_back({behavior_from_json(p)});
        }
      }
    } else {
      for (double e : default_epsilon_grid()) cfg.policies.push_back({BehaviorSpec::eps_greedy(e)});
      for (double t : default_temperature_grid()) cfg.policies.push_back({BehaviorSpec::boltzmann(t)});
    }
    if (doc.contains("coverage")) cfg.coverage = doc.at("coverage").get<std::vector<bool>>();
    if (doc.contains("algorithms")) cfg.algorithms = doc.at("algorithms").get<std::vector<std::string>>();
    if (doc.contains("train")) cfg.train_overrides = doc.at("train");
    cfg.n_runs = doc.value("n_runs", cfg.n_runs);
    cfg.n_eval_rollouts = doc.value("n_eval_rollouts", cfg.n_eval_rollouts);
    cfg.seed_root = doc.value("seed_root", cfg.seed_root);
    cfg.feature_seed = doc.value("feature_seed", cfg.feature_seed);
    cfg.output_dir = doc.value("output_dir", cfg.output_dir);
    cfg.threads = doc.value("threads", cfg.threads);
    if (doc.contains("params")) cfg.params = doc.at("params");
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("experiment config: ") + e.what());
  }

  if (std::find_if(std::begin(kKinds), std::end(kKinds), [&](const char* k) { return cfg.kind == k; }) ==
      std::end(kKinds)) {
    throw InvalidArgument("experiment config: unknown kind '" + cfg.kind + "'");
  }
  if (cfg.n_runs < 1) throw InvalidArgument("experiment config: n_runs must be >= 1");
  if (cfg.n_eval_rollouts < 1) throw InvalidArgument("experiment config: n_eval_rollouts must be >= 1");
  if (cfg.threads < 1) throw InvalidArgument("experiment config: threads must be >= 1");
  if (cfg.kind == "offline" || cfg.kind == "concentrability") {
    const auto ids = known_env_ids();
    if (std::find(ids.begin(), ids.end(), cfg.env_id) == ids.end()) {
      throw InvalidArgument("experiment config: unknown env '" + cfg.env_id + "'");
    }
    if (cfg.policies.empty()) throw InvalidArgument("experiment config: empty policy grid");
  }
  if (cfg.kind == "offline") {
    if (cfg.coverage.empty()) throw InvalidArgument("experiment config: empty coverage list");
    if (cfg.algorithms.empty()) throw InvalidArgument("experiment config: no algorithms");
    for (const auto& a : cfg.algorithms) {
      if (a != "dqn" && a != "cql") throw InvalidArgument("experiment config: unknown algorithm '" + a + "'");
    }
    // Surface bad overrides before any work is done.
    apply_overrides(profile_train_config(cfg.env_id, cfg.profile), cfg.train_overrides);
  }
  return cfg;
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json policies = nlohmann::json::array();
  for (const auto& p : cfg.policies) {
    policies.push_back({{"policy", behavior_name(p.behavior)}, {"param", p.behavior.param}});
  }
  return {{"kind", cfg.kind},
          {"env", cfg.env_id},
          {"profile", cfg.profile == Profile::kDesk ? "desk" : "paper"},
          {"policies", policies},
          {"coverage", cfg.coverage},
          {"algorithms", cfg.algorithms},
          {"train", cfg.train_overrides},
          {"n_runs", cfg.n_runs},
          {"n_eval_rollouts", cfg.n_eval_rollouts},
          {"seed_root", cfg.seed_root},
          {"feature_seed", cfg.feature_seed},
          {"output_dir", cfg.output_dir},
          {"threads", cfg.threads},
          {"params", cfg.params}};
}

// ─── Offline study ──────────────────────────────────────────────────────────

namespace {

struct DatasetPoint {
  std::size_t index = 0;  // j in the seed derivation
  PolicyPoint policy;
  bool coverage = false;
  std::string label;
  Dataset dataset;
  DatasetMetrics metrics;
  bool ok = false;
};

struct RunTask {
  std::size_t point;
  std::string algorithm;
  std::size_t run;
};

void run_pool(std::size_t n_tasks, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n_tasks; i = next++) fn(i);
  };
  const std::size_t n = std::min(threads, std::max<std::size_t>(1, n_tasks));
  if (n <= 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

OptimalPolicySet reference_policy_set(const Environment& env, const QTable& q) {
  if (env.is_tabular()) return optimal_policy_set(env, q);
  std::vector<std::size_t> actions(q.n_states());
  for (std::size_t s = 0; s < q.n_states(); ++s) actions[s] = argmax_action(q.row(s));
  return policy_set_from_tables({PolicyTable::deterministic(actions, q.n_actions())});
}

// Generates or loads the dataset for one grid point. The base dataset seed
// depends on the policy point only, so the enforced variant extends the very
// same transitions.
Dataset obtain_dataset(const ExperimentConfig& cfg, const Environment& env, const QTable& q_star,
                       const PolicyPoint& policy, std::size_t policy_index, bool coverage, std::size_t size,
                       const fs::path& cache_dir) {
  const std::uint64_t seed = derive_seed(cfg.seed_root, {0xDA7A, policy_index});
  const std::uint64_t patch_seed = derive_seed(cfg.seed_root, {0xC0FE, policy_index});
  const nlohmann::json key{{"env", cfg.env_id},         {"feature_seed", cfg.feature_seed},
                           {"policy", behavior_name(policy.behavior)}, {"param", policy.behavior.param},
                           {"size", size},              {"seed", seed},
                           {"coverage", coverage},      {"patch_seed", coverage ? patch_seed : 0}};
  const fs::path stem = cache_dir / hex16(fnv1a(key.dump()));
  if (fs::exists(stem.string() + ".json") && fs::exists(stem.string() + ".csv")) {
    return load_dataset(stem.string());
  }
  Dataset ds = generate_dataset(env, q_star, policy.behavior, size, seed);
  if (coverage) ds = enforce_coverage(ds, env, patch_seed);
  save_dataset(ds, env, stem.string());
  return ds;
}

ExperimentSummary run_offline_study(const ExperimentConfig& cfg, const fs::path& dir) {
  ExperimentSummary summary;
  summary.directory = dir.string();
  auto env = make_env(cfg.env_id, cfg.feature_seed);
  TrainConfig base = apply_overrides(profile_train_config(cfg.env_id, cfg.profile), cfg.train_overrides);
  base.n_eval_rollouts = cfg.n_eval_rollouts;

  const Reference ref = compute_reference(*env, derive_seed(cfg.seed_root, {0x5EF}));
  const OptimalPolicySet opt = reference_policy_set(*env, ref.q);
  const ReferenceOccupancy occ =
      reference_occupancy(*env, opt, kReferenceRollouts, derive_seed(cfg.seed_root, {0x0CC}));
  write_json(dir / "reference.json", {{"env", cfg.env_id},
                                      {"r_opt", ref.r_opt},
                                      {"r_rand", ref.r_rand},
                                      {"n_baseline_episodes", ref.n_baseline_episodes},
                                      {"n_optimal_policies", opt.actions.size()},
                                      {"optimal_policy_count", opt.total_count},
                                      {"optimal_set_truncated", opt.truncated},
                                      {"d_pi_star_sampling_error", occ.sampling_error}});

  const fs::path cache_dir = dir / "datasets";
  fs::create_directories(cache_dir);
  std::vector<DatasetPoint> points;
  for (std::size_t p = 0; p < cfg.policies.size(); ++p) {
    for (std::size_t c = 0; c < cfg.coverage.size(); ++c) {
      DatasetPoint pt;
      pt.index = p * cfg.coverage.size() + c;
      pt.policy = cfg.policies[p];
      pt.coverage = cfg.coverage[c];
      pt.label = pt.policy.label() + (pt.coverage ? "_cov1" : "_cov0");
      try {
        pt.dataset = obtain_dataset(cfg, *env, ref.q, pt.policy, p, pt.coverage, base.dataset_size, cache_dir);
        pt.metrics = dataset_metrics(pt.dataset, *env, occ);
        pt.ok = true;
      } catch (const std::exception& e) {
        summary.failures.push_back(pt.label + ": " + e.what());
      }
      points.push_back(std::move(pt));
    }
  }
  summary.n_points = points.size();

  std::vector<RunTask> tasks;
  for (std::size_t j = 0; j < points.size(); ++j) {
    if (!points[j].ok) continue;
    for (const auto& algo : cfg.algorithms) {
      for (std::size_t i = 0; i < cfg.n_runs; ++i) tasks.push_back({j, algo, i});
    }
  }

  const FeatureEncoder encoder(*env);
  const Evaluator evaluator(*env, &ref);
  std::mutex mu;
  std::atomic<std::size_t> diverged{0};
  run_pool(tasks.size(), cfg.threads, [&](std::size_t t) {
    const RunTask& task = tasks[t];
    const DatasetPoint& pt = points[task.point];
    const fs::path run_dir = dir / "runs" / pt.label / task.algorithm / ("run" + std::to_string(task.run));
    try {
      fs::create_directories(run_dir);
      TrainConfig tc = base;
      tc.seed = derive_seed(cfg.seed_root, {pt.index, task.run});
      auto net = make_network(*env, tc, derive_seed(tc.seed, {0x1E7}));
      RunResult r = task.algorithm == "dqn" ? offline_dqn(pt.dataset, encoder, *net, tc, &evaluator)
                                            : offline_cql(pt.dataset, encoder, *net, tc, &evaluator);
      if (r.diverged) ++diverged;
      nlohmann::json doc = to_json(r);
      doc["env"] = cfg.env_id;
      doc["point"] = pt.label;
      doc["point_index"] = pt.index;
      doc["run"] = task.run;
      doc["seed"] = tc.seed;
      doc["policy"] = behavior_name(pt.policy.behavior);
      doc["param"] = pt.policy.behavior.param;
      doc["coverage_enforced"] = pt.coverage;
      doc["dataset"] = to_json(pt.dataset.spec);
      doc["dataset_metrics"] = to_json(pt.metrics);
      doc["train_config"] = to_json(tc);
      write_json(run_dir / "result.json", doc);
      write_series_csv(r, (run_dir / "series.csv").string());
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(mu);
      summary.failures.push_back(pt.label + "/" + task.algorithm + "/run" + std::to_string(task.run) + ": " +
                                 e.what());
    }
  });
  summary.n_runs = tasks.size();
  summary.n_diverged = diverged;
  std::sort(summary.failures.begin(), summary.failures.end());
  return summary;
}

// ─── Concentrability study (small tabular MDPs) ─────────────────────────────

void run_concentrability_study(const ExperimentConfig& cfg, const fs::path& dir) {
  auto env = make_env(cfg.env_id, cfg.feature_seed);
  if (env->tabular_mdp() == nullptr) throw InvalidArgument("concentrability: env must be tabular");
  const TabularMdp& mdp = *env->tabular_mdp();
  const QTable q = value_iteration(mdp);
  const std::size_t m_max = cfg.params.value("m_max", std::size_t{10});
  std::optional<double> gamma;
  if (cfg.params.contains("gamma")) gamma = cfg.params.at("gamma").get<double>();
  const std::string rho_kind = cfg.params.value("rho", std::string("initial_uniform"));
  std::FILE* f = open_write(dir / "concentrability_raw.csv");
  std::fprintf(f, "policy,param,rho,c1,c2,c3,c2_tail_bound,c3_tail_bound,gamma,m_truncation\n");
  for (const auto& p : cfg.policies) {
    const PolicyTable pi = behavior_policy(q, p.behavior);
    const DistributionSA mu = occupancy_sa(mdp, pi, OccupancyMode::kDiscounted, 0, 0);
    DistributionSA rho;
    if (rho_kind == "initial_uniform") {
      rho = initial_times_uniform_actions(mdp);
    } else if (rho_kind == "mu") {
      rho = mu;
    } else {
      std::fclose(f);
      throw InvalidArgument("concentrability: rho must be 'initial_uniform' or 'mu'");
    }
    const ConcentrabilityReport r = c2_c3_coefficients(mdp, rho, mu, m_max, gamma);
    std::fprintf(f, "%s,%s,%s,%s,%s,%s,%s,%s,%s,%zu\n", behavior_name(p.behavior).c_str(),
                 fmt(p.behavior.param).c_str(), rho_kind.c_str(), fmt(r.c1).c_str(), fmt(r.c2).c_str(),
                 fmt(r.c3).c_str(), fmt(r.c2_tail_bound).c_str(), fmt(r.c3_tail_bound).c_str(),
                 fmt(r.gamma).c_str(), r.m_truncation);
  }
  std::fclose(f);
}

}  // namespace

ExperimentSummary run_experiment(const ExperimentConfig& config) {
  const fs::path dir = resolve_output_dir(config.output_dir);
  fs::create_directories(dir);
  write_json(dir / "config.json", to_json(config));

  ExperimentSummary summary;
  summary.directory = dir.string();
  if (config.kind == "offline") {
    summary = run_offline_study(config, dir);
  } else if (config.kind == "fourstate_sweep") {
    const auto alphas = config.params.value("alphas", std::vector<double>{1.0, 1.1, 1.2, 1.25, 1.3, 1.4});
    write_fourstate_sweep(dir.string(), alphas, config.params.value("q_step", 0.005));
  } else if (config.kind == "fourstate_online") {
    const auto runs = default_online_study(config.params.value("episodes", std::size_t{10000}), config.seed_root);
    write_fourstate_online(dir.string(), runs, config.params.value("record_every", std::size_t{10}));
  } else if (config.kind == "dirichlet") {
    DirichletConfig dc;
    dc.n_pairs = config.params.value("n_pairs", dc.n_pairs);
    dc.alphas = config.params.value("alphas", dc.alphas);
    dc.n_dists = config.params.value("n_dists", dc.n_dists);
    dc.dataset_sizes = config.params.value("dataset_sizes", dc.dataset_sizes);
    dc.n_peer_dists = config.params.value("n_peer_dists", dc.n_peer_dists);
    dc.seed = config.seed_root;
    write_dirichlet_study(dir.string(), dc);
  } else if (config.kind == "concentrability") {
    run_concentrability_study(config, dir);
  }

  write_json(dir / "summary.json", {{"kind", config.kind},
                                    {"n_points", summary.n_points},
                                    {"n_runs", summary.n_runs},
                                    {"n_diverged", summary.n_diverged},
                                    {"failures", summary.failures}});
  report(dir.string());
  return summary;
}

// ─── Aggregation ────────────────────────────────────────────────────────────

std::vector<PointRow> collect_points(const std::string& dir) {
  const fs::path runs = fs::path(dir) / "runs";
  if (!fs::is_directory(runs)) return {};
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(runs)) {
    if (e.is_regular_file() && e.path().filename() == "result.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  struct Acc {
    PointRow row;
    std::vector<double> rewards;
    std::vector<double> q_errors;
  };
  std::map<std::pair<std::string, std::string>, Acc> groups;
  for (const auto& path : files) {
    const nlohmann::json doc = read_json(path);
    const std::string point = doc.at("point").get<std::string>();
    const std::string algo = doc.at("algorithm").get<std::string>();
    Acc& acc = groups[{point, algo}];
    if (acc.rewards.empty()) {
      acc.row.env = doc.at("env").get<std::string>();
      acc.row.algorithm = algo;
      acc.row.policy = doc.at("policy").get<std::string>();
      acc.row.param = doc.at("param").get<double>();
      acc.row.coverage_enforced = doc.at("coverage_enforced").get<bool>();
      const auto& m = doc.at("dataset_metrics");
      acc.row.normalized_entropy = m.at("normalized_entropy").get<double>();
      acc.row.coverage = m.at("coverage").get<double>();
      acc.row.d_pi_star = m.at("d_pi_star").get<double>();
    }
    acc.rewards.push_back(doc.at("final").at("normalized_return").get<double>());
    acc.q_errors.push_back(doc.at("final").at("q_error").get<double>());
    if (doc.at("diverged").get<bool>()) ++acc.row.n_diverged;
  }

  std::vector<PointRow> rows;
  for (auto& [key, acc] : groups) {
    acc.row.n_runs = acc.rewards.size();
    acc.row.mean_norm_reward = mean_of(acc.rewards);
    acc.row.std_norm_reward = std_of(acc.rewards);
    acc.row.mean_q_error = mean_of(acc.q_errors);
    rows.push_back(acc.row);
  }
  std::sort(rows.begin(), rows.end(), [](const PointRow& a, const PointRow& b) {
    return std::tie(a.env, a.algorithm, a.policy, a.param, a.coverage_enforced) <
           std::tie(b.env, b.algorithm, b.policy, b.param, b.coverage_enforced);
  });
  return rows;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw InvalidArgument("spearman: length mismatch");
  if (x.size() < 2) throw InvalidArgument("spearman: need at least two points");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = mean_of(rx), my = mean_of(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<std::string> report(const std::string& dir_str) {
  const fs::path dir(dir_str);
  if (!fs::is_directory(dir)) throw InvalidArgument("report: no such directory " + dir_str);
  const fs::path out = dir / "report";
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const CsvTable& t, bool clip_note) {
    fs::create_directories(out);
    write_csv(out / name, t, clip_note);
    written.push_back((out / name).string());
  };

  const auto rows = collect_points(dir_str);
  if (!rows.empty()) {
    CsvTable points{{"env", "algorithm", "policy", "param", "coverage_enforced", "normalized_entropy", "coverage",
                     "d_pi_star", "mean_norm_reward", "std", "mean_q_error", "n_runs", "n_diverged"},
                    {}};
    CsvTable fig5{{"env", "algorithm", "normalized_entropy", "mean_norm_reward", "std", "policy", "param",
                   "coverage_enforced"},
                  {}};
    CsvTable fig6{{"env", "algorithm", "epsilon", "coverage_enforced", "mean_norm_reward", "std"}, {}};
    CsvTable fig7{{"env", "algorithm", "d_pi_star", "mean_norm_reward", "std", "policy", "param",
                   "coverage_enforced"},
                  {}};
    for (const auto& r : rows) {
      const std::string cov = r.coverage_enforced ? "1" : "0";
      points.rows.push_back({r.env, r.algorithm, r.policy, fmt(r.param), cov, fmt(r.normalized_entropy),
                             fmt(r.coverage), fmt(r.d_pi_star), fmt(r.mean_norm_reward), fmt(r.std_norm_reward),
                             fmt(r.mean_q_error), std::to_string(r.n_runs), std::to_string(r.n_diverged)});
      fig5.rows.push_back({r.env, r.algorithm, fmt(r.normalized_entropy), fmt(r.mean_norm_reward),
                           fmt(r.std_norm_reward), r.policy, fmt(r.param), cov});
      if (r.policy == "eps_greedy") {
        fig6.rows.push_back({r.env, r.algorithm, fmt(r.param), cov, fmt(r.mean_norm_reward), fmt(r.std_norm_reward)});
      }
      fig7.rows.push_back({r.env, r.algorithm, fmt(r.d_pi_star), fmt(r.mean_norm_reward), fmt(r.std_norm_reward),
                           r.policy, fmt(r.param), cov});
    }
    emit("points.csv", points, true);
    emit("fig5_entropy.csv", fig5, true);
    emit("fig6_coverage.csv", fig6, true);
    emit("fig7_distance.csv", fig7, true);
  }

  if (fs::exists(dir / "fourstate_sweep.csv")) {
    CsvTable raw = read_csv(dir / "fourstate_sweep.csv");
    CsvTable t{{"alpha", "q", "mode", "correct_actions"}, {}};
    const std::size_t ca = raw.column("alpha"), cq = raw.column("q"), cm = raw.column("mode"),
                      cc = raw.column("correct_actions");
    for (const auto& r : raw.rows) t.rows.push_back({r[ca], r[cq], r[cm], r[cc]});
    emit("fig2_fourstate_sweep.csv", t, false);
  }

  if (fs::is_directory(dir / "fourstate_online")) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir / "fourstate_online")) {
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (!files.empty()) {
      CsvTable series{{"run"}, {}};
      CsvTable stds{{"run", "capacity", "policy", "epsilon", "window", "q_error_std", "final_correct_actions",
                     "final_buffer_ratio"},
                    {}};
      for (const auto& path : files) {
        const CsvTable raw = read_csv(path);
        if (series.header.size() == 1) {
          series.header.insert(series.header.end(), raw.header.begin(), raw.header.end());
        }
        const std::string run = path.stem().string();
        std::vector<double> err;
        const std::size_t ce = raw.column("mean_q_error");
        for (const auto& r : raw.rows) {
          std::vector<std::string> row{run};
          row.insert(row.end(), r.begin(), r.end());
          series.rows.push_back(std::move(row));
          err.push_back(std::stod(r[ce]));
        }
        const nlohmann::json meta = read_json(path.parent_path() / (run + ".json"));
        const std::size_t window = meta.at("window").get<std::size_t>();
        double sd = 0.0;
        if (!err.empty()) {
          const std::size_t w = std::min(window, err.size());
          std::vector<double> tail(err.end() - static_cast<std::ptrdiff_t>(w), err.end());
          const double m = mean_of(tail);
          for (double v : tail) sd += (v - m) * (v - m);
          sd = std::sqrt(sd / static_cast<double>(w));
        }
        std::string correct = "", ratio = "";
        if (!raw.rows.empty()) {
          const auto& last = raw.rows.back();
          correct = last[raw.column("correct_actions")];
          const double m11 = std::stod(last[raw.column("mu_s1a1")]);
          const double m21 = std::stod(last[raw.column("mu_s2a1")]);
          ratio = m11 + m21 > 0.0 ? fmt(m11 / (m11 + m21)) : "nan";
        }
        stds.rows.push_back({run, meta.at("capacity").get<std::string>(), meta.at("policy").get<std::string>(),
                             fmt(meta.at("epsilon").get<double>()), std::to_string(window), fmt(sd), correct,
                             ratio});
      }
      emit("fig3_fourstate_online.csv", series, false);
      emit("fig4_q_error_std.csv", stds, false);
    }
  }

  if (fs::exists(dir / "dirichlet_raw.csv")) {
    emit("dirichlet.csv", read_csv(dir / "dirichlet_raw.csv"), false);
  }
  if (fs::exists(dir / "concentrability_raw.csv")) {
    emit("concentrability.csv", read_csv(dir / "concentrability_raw.csv"), false);
  }

  if (written.empty()) throw InvalidArgument("report: no experiment data in " + dir_str);
  return written;
}

// ─── Four-state and Dirichlet studies ───────────────────────────────────────

void write_fourstate_sweep(const std::string& dir, const std::vector<double>& alphas, double q_step) {
  if (!(q_step > 0.0 && q_step <= 1.0)) throw InvalidArgument("fourstate sweep: q_step must be in (0, 1]");
  fs::create_directories(dir);
  const auto q_grid = four_state::linear_grid(0.0, 1.0, q_step);
  std::FILE* f = open_write(fs::path(dir) / "fourstate_sweep.csv");
  std::fprintf(f, "alpha,q,mode,correct_actions\n");
  for (auto mode : {four_state::SolverMode::kOracle, four_state::SolverMode::kTd}) {
    const auto rows = four_state::sweep_offline(alphas, q_grid, mode);
    for (const auto& r : rows) {
      std::fprintf(f, "%s,%s,%s,%d\n", fmt(r.alpha).c_str(), fmt(r.q).c_str(),
                   mode == four_state::SolverMode::kOracle ? "oracle" : "td", r.correct_actions);
    }
  }
  std::fclose(f);
}

std::vector<OnlineStudyRun> default_online_study(std::size_t episodes, std::uint64_t seed) {
  using four_state::ReplaySpec;
  std::vector<OnlineStudyRun> runs;
  auto add = [&](const std::string& label, ReplaySpec spec) {
    four_state::OnlineConfig c;
    c.replay = spec;
    c.episodes = episodes;
    c.seed = derive_seed(seed, {runs.size()});
    runs.push_back({label, c});
  };
  add("uniform_synthetic", ReplaySpec::uniform_synthetic());
  add("eps1_unlimited", ReplaySpec::eps_greedy(1.0));
  add("eps0.05_cap10000", ReplaySpec::eps_greedy(0.05, 10000));
  add("eps0.05_cap50000", ReplaySpec::eps_greedy(0.05, 50000));
  add("eps0.05_unlimited", ReplaySpec::eps_greedy(0.05));
  return runs;
}

void write_fourstate_online(const std::string& dir, const std::vector<OnlineStudyRun>& runs,
                            std::size_t record_every) {
  if (record_every == 0) throw InvalidArgument("fourstate online: record_every must be positive");
  const fs::path sub = fs::path(dir) / "fourstate_online";
  fs::create_directories(sub);
  for (const auto& run : runs) {
    four_state::OnlineConfig c = run.config;
    c.record_every = record_every;
    const auto records = four_state::online_sim(c);
    std::FILE* f = open_write(sub / (run.label + ".csv"));
    std::fprintf(f,
                 "episode,w1,w2,w3,q_s1a1,q_s1a2,q_s2a1,q_s2a2,mu_s1a1,mu_s1a2,mu_s2a1,mu_s2a2,"
                 "greedy_reward,correct_actions,mean_q_error\n");
    for (const auto& r : records) {
      std::fprintf(f, "%zu,%s,%s,%s", r.episode, fmt(r.w.w1).c_str(), fmt(r.w.w2).c_str(), fmt(r.w.w3).c_str());
      for (double v : r.q_values) std::fprintf(f, ",%s", fmt(v).c_str());
      for (double v : r.buffer_mu) std::fprintf(f, ",%s", fmt(v).c_str());
      std::fprintf(f, ",%s,%d,%s\n", fmt(r.greedy_reward).c_str(), r.correct_actions, fmt(r.mean_q_error).c_str());
    }
    std::fclose(f);
    // Trailing window: last 20% of the recorded episodes.
    const std::size_t window = std::max<std::size_t>(1, records.size() / 5);
    const bool synthetic = c.replay.policy == four_state::ReplaySpec::Policy::kUniformSynthetic;
    write_json(sub / (run.label + ".json"),
               {{"capacity", c.replay.capacity ? std::to_string(*c.replay.capacity) : std::string("unlimited")},
                {"policy", synthetic ? "uniform_synthetic" : "eps_greedy"},
                {"epsilon", c.replay.epsilon},
                {"alpha", c.alpha},
                {"episodes", c.episodes},
                {"eta", c.eta},
                {"seed", c.seed},
                {"record_every", record_every},
                {"window", window}});
  }
}

void write_dirichlet_study(const std::string& dir, const DirichletConfig& config) {
  fs::create_directories(dir);
  const auto rows = dirichlet_study(config);
  std::FILE* f = open_write(fs::path(dir) / "dirichlet_raw.csv");
  std::fprintf(f, "alpha,mean_entropy");
  for (auto n : config.dataset_sizes) std::fprintf(f, ",coverage_n%zu", n);
  std::fprintf(f, ",mean_chi2_to_peers\n");
  for (const auto& r : rows) {
    std::fprintf(f, "%s,%s", fmt(r.alpha).c_str(), fmt(r.mean_entropy).c_str());
    for (double c : r.mean_coverage) std::fprintf(f, ",%s", fmt(c).c_str());
    std::fprintf(f, ",%s\n", fmt(r.mean_chi2_to_peers).c_str());
  }
  std::fclose(f);
}

}  // namespace rldd
