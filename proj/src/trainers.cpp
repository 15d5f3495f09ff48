#include "rldd/trainers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "rldd/errors.hpp"

namespace rldd {

CqlPenalty cql_penalty_from_string(const std::string& name) {
  if (name == "logsumexp_minus_data") return CqlPenalty::kLogsumexpMinusData;
  if (name == "max_q") return CqlPenalty::kMaxQ;
  throw InvalidArgument("unknown CQL penalty '" + name + "'");
}

std::string to_string(CqlPenalty penalty) {
  return penalty == CqlPenalty::kLogsumexpMinusData ? "logsumexp_minus_data" : "max_q";
}

// ─── Config ─────────────────────────────────────────────────────────────────

TrainConfig default_train_config(const std::string& env_id) {
  TrainConfig cfg;
  if (env_id == "grid1" || env_id == "grid2" || env_id == "multipath" || env_id == "fourstate") {
    cfg.learning_steps = 100000;
    cfg.dataset_size = 50000;
    cfg.hidden = {20, 40, 20};
    cfg.gamma = env_id == "fourstate" ? 1.0 : 0.9;
  } else if (env_id == "pendulum" || env_id == "mountaincar") {
    cfg.learning_steps = 200000;
    cfg.dataset_size = 200000;
    cfg.hidden = {64, 128, 64};
    cfg.gamma = 0.99;
  } else if (env_id == "cartpole") {
    cfg.learning_steps = 500000;
    cfg.dataset_size = 1000000;
    cfg.hidden = {64, 128, 64};
    cfg.gamma = 0.99;
  } else {
    throw InvalidArgument("default_train_config: unknown environment '" + env_id + "'");
  }
  return cfg;
}

TrainConfig apply_overrides(TrainConfig cfg, const nlohmann::json& o) {
  if (!o.is_object()) throw InvalidArgument("train overrides must be a JSON object");
  try {
    for (const auto& [key, value] : o.items()) {
      if (key == "batch_size") cfg.batch_size = value.get<std::size_t>();
      else if (key == "target_update_period") cfg.target_update_period = value.get<std::size_t>();
      else if (key == "learning_steps") cfg.learning_steps = value.get<std::size_t>();
      else if (key == "gamma") cfg.gamma = value.get<double>();
      else if (key == "cql_alpha") cfg.cql_alpha = value.get<double>();
      else if (key == "cql_penalty") cfg.cql_penalty = cql_penalty_from_string(value.get<std::string>());
      else if (key == "lr") cfg.adam.lr = value.get<double>();
      else if (key == "clip_norm") cfg.adam.clip_norm = value.get<double>();
      else if (key == "eval_fraction") cfg.eval_fraction = value.get<double>();
      else if (key == "n_eval_rollouts") cfg.n_eval_rollouts = value.get<std::size_t>();
      else if (key == "divergence_threshold") cfg.divergence_threshold = value.get<double>();
      else if (key == "hidden") cfg.hidden = value.get<std::vector<std::size_t>>();
      else if (key == "activation") cfg.activation = activation_from_string(value.get<std::string>());
      else if (key == "dataset_size") cfg.dataset_size = value.get<std::size_t>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else throw InvalidArgument("unknown train config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("train config: ") + e.what());
  }
  if (cfg.batch_size == 0 || cfg.target_update_period == 0 || cfg.learning_steps == 0) {
    throw InvalidArgument("train config: batch_size, target_update_period and learning_steps must be positive");
  }
  if (!(cfg.eval_fraction > 0.0 && cfg.eval_fraction <= 1.0)) {
    throw InvalidArgument("train config: eval_fraction must lie in (0, 1]");
  }
  if (cfg.n_eval_rollouts == 0) throw InvalidArgument("train config: n_eval_rollouts must be >= 1");
  return cfg;
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"batch_size", cfg.batch_size},
          {"target_update_period", cfg.target_update_period},
          {"learning_steps", cfg.learning_steps},
          {"gamma", cfg.gamma},
          {"cql_alpha", cfg.cql_alpha},
          {"cql_penalty", to_string(cfg.cql_penalty)},
          {"lr", cfg.adam.lr},
          {"clip_norm", cfg.adam.clip_norm},
          {"eval_fraction", cfg.eval_fraction},
          {"n_eval_rollouts", cfg.n_eval_rollouts},
          {"divergence_threshold", cfg.divergence_threshold},
          {"hidden", cfg.hidden},
          {"activation", to_string(cfg.activation)},
          {"dataset_size", cfg.dataset_size},
          {"seed", cfg.seed}};
}

std::unique_ptr<QModel> make_network(const Environment& env, const TrainConfig& cfg, std::uint64_t seed) {
  std::vector<std::size_t> widths{env.feature_dim()};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(env.n_actions());
  return std::make_unique<Mlp>(widths, cfg.activation, seed);
}

// ─── Reference and evaluation ───────────────────────────────────────────────

namespace {

std::size_t samples_per_cell(const ControlEnv& env) {
  return env.dynamics().kind() == ControlKind::kCartPole ? 1 : 5;
}

/// Q-values for every cell representative, one row per cell.
QTable model_table(const QModel& model, const Environment& env) {
  const std::size_t n = env.n_cells(), dim = env.feature_dim();
  Matrix x(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n));
  for (std::size_t c = 0; c < n; ++c) {
    env.features(env.cell_representative(c), std::span<double>(x.col(static_cast<Eigen::Index>(c)).data(), dim));
  }
  Matrix q;
  model.forward(x, q);
  std::vector<double> values(n * env.n_actions());
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t a = 0; a < env.n_actions(); ++a) {
      values[c * env.n_actions() + a] = q(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
    }
  }
  return QTable(n, env.n_actions(), std::move(values));
}

std::size_t greedy_nan_safe(const Matrix& q, Eigen::Index col) {
  std::size_t best = 0;
  for (Eigen::Index a = 1; a < q.rows(); ++a) {
    if (q(a, col) > q(static_cast<Eigen::Index>(best), col)) best = static_cast<std::size_t>(a);
  }
  return best;
}

}  // namespace

double normalize_return(double r, double r_opt, double r_rand) {
  const double span = r_opt - r_rand;
  if (!(std::abs(span) > 1e-12) || !std::isfinite(r)) return kNormalizedMin;
  return std::clamp((r - r_rand) / span, kNormalizedMin, kNormalizedMax);
}

Reference compute_reference(const Environment& env, std::uint64_t seed, std::size_t n_episodes) {
  if (n_episodes == 0) throw InvalidArgument("compute_reference: n_episodes must be >= 1");
  Reference ref;
  if (const TabularMdp* mdp = env.tabular_mdp()) {
    ref.q = value_iteration(*mdp);
  } else {
    const auto& control = dynamic_cast<const ControlEnv&>(env);
    const TabularMdp cells = discretized_mdp(control, samples_per_cell(control), derive_seed(seed, {1}));
    ValueIterationOptions opts;
    opts.tol = 1e-8;
    const QTable full = value_iteration(cells, opts);
    std::vector<double> values(full.values().begin(),
                               full.values().begin() + static_cast<std::ptrdiff_t>(env.n_cells() * env.n_actions()));
    ref.q = QTable(env.n_cells(), env.n_actions(), std::move(values));
  }
  Rng rng(derive_seed(seed, {2}));
  double opt = 0.0, rand = 0.0;
  for (std::size_t i = 0; i < n_episodes; ++i) {
    opt += rollout_return(env, rng, [&](const StateVec& s) { return argmax_action(ref.q.row(env.cell_of(s))); });
  }
  for (std::size_t i = 0; i < n_episodes; ++i) {
    rand += rollout_return(env, rng, [&](const StateVec&) { return rng.index(env.n_actions()); });
  }
  ref.r_opt = opt / static_cast<double>(n_episodes);
  ref.r_rand = rand / static_cast<double>(n_episodes);
  ref.n_baseline_episodes = n_episodes;
  return ref;
}

double Evaluator::q_error(const QModel& model) const {
  if (ref_ == nullptr) throw InvalidArgument("Evaluator::q_error: no reference available");
  const QTable q = model_table(model, env_);
  double err = 0.0;
  for (std::size_t i = 0; i < q.values().size(); ++i) err += std::abs(q.values()[i] - ref_->q.values()[i]);
  return err / static_cast<double>(q.values().size());
}

EvalResult Evaluator::evaluate(const QModel& model, std::size_t n_rollouts, std::uint64_t seed) const {
  if (n_rollouts == 0) throw InvalidArgument("evaluate: n_rollouts must be >= 1");
  Rng rng(seed);
  double total = 0.0;
  if (env_.is_tabular()) {
    const QTable q = model_table(model, env_);
    for (std::size_t i = 0; i < n_rollouts; ++i) {
      total += rollout_return(env_, rng, [&](const StateVec& s) {
        const auto row = q.row(env_.cell_of(s));
        std::size_t best = 0;
        for (std::size_t a = 1; a < row.size(); ++a) {
          if (row[a] > row[best]) best = a;
        }
        return best;
      });
    }
  } else {
    Matrix x(static_cast<Eigen::Index>(env_.feature_dim()), 1), q;
    for (std::size_t i = 0; i < n_rollouts; ++i) {
      total += rollout_return(env_, rng, [&](const StateVec& s) {
        env_.features(s, std::span<double>(x.data(), env_.feature_dim()));
        model.forward(x, q);
        return greedy_nan_safe(q, 0);
      });
    }
  }
  EvalResult out;
  out.mean_return = total / static_cast<double>(n_rollouts);
  if (ref_ != nullptr) {
    out.normalized_return = normalize_return(out.mean_return, ref_->r_opt, ref_->r_rand);
    out.q_error = q_error(model);
    out.has_q_error = true;
  } else {
    out.normalized_return = out.mean_return;
  }
  return out;
}

EvalResult Evaluator::evaluate(const PolicyTable& policy, std::size_t n_rollouts, std::uint64_t seed) const {
  if (n_rollouts == 0) throw InvalidArgument("evaluate: n_rollouts must be >= 1");
  if (policy.n_states() < env_.n_cells() || policy.n_actions() != env_.n_actions()) {
    throw InvalidArgument("evaluate: policy shape does not match the environment");
  }
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t i = 0; i < n_rollouts; ++i) {
    total += rollout_return(env_, rng, [&](const StateVec& s) { return rng.categorical(policy.row(env_.cell_of(s))); });
  }
  EvalResult out;
  out.mean_return = total / static_cast<double>(n_rollouts);
  out.normalized_return =
      ref_ != nullptr ? normalize_return(out.mean_return, ref_->r_opt, ref_->r_rand) : out.mean_return;
  return out;
}

// ─── Run results ────────────────────────────────────────────────────────────

nlohmann::json to_json(const RunResult& r) {
  nlohmann::json series = nlohmann::json::array();
  for (const auto& p : r.series) {
    series.push_back({{"step", p.step},
                      {"loss", p.loss},
                      {"eval_return", p.eval_return},
                      {"normalized_return", p.normalized_return},
                      {"q_error", p.q_error}});
  }
  nlohmann::json doc{{"algorithm", r.algorithm},
                     {"final",
                      {{"mean_return", r.final_eval.mean_return},
                       {"normalized_return", r.final_eval.normalized_return},
                       {"q_error", r.final_eval.q_error},
                       {"has_q_error", r.final_eval.has_q_error}}},
                     {"diverged", r.diverged},
                     {"steps_completed", r.steps_completed},
                     {"wall_seconds", r.wall_seconds},
                     {"series", series}};
  if (r.diverged) doc["divergence_message"] = r.divergence_message;
  return doc;
}

void write_series_csv(const RunResult& r, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw InvalidArgument("cannot write " + path);
  std::fprintf(f, "# normalized reward clipped to [-0.1, 1.1]\n");
  std::fprintf(f, "step,loss,eval_return,normalized_return,q_error\n");
  for (const auto& p : r.series) {
    std::fprintf(f, "%zu,%.17g,%.17g,%.17g,%.17g\n", p.step, p.loss, p.eval_return, p.normalized_return, p.q_error);
  }
  std::fclose(f);
}

// ─── Shared learner ─────────────────────────────────────────────────────────

namespace {

enum class Algo { kDqn, kCql };

/// Model, target copy and optimizer state; one call to update() is one
/// learning step on a prepared batch.
class Learner {
 public:
  Learner(QModel& model, const TrainConfig& cfg, Algo algo)
      : model_(model), target_(model.clone()), cfg_(cfg), algo_(algo), adam_(model.n_params()),
        grad_(model.n_params()) {}

  /// Returns false on divergence (message in error()).
  bool update(const Matrix& x, const Matrix& xn, std::span<const std::size_t> actions,
              std::span<const double> rewards, std::span<const char> done) {
    const auto batch = static_cast<std::size_t>(x.cols());
    target_->forward(xn, qn_);
    targets_.resize(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const double next = done[b] ? 0.0 : qn_.col(static_cast<Eigen::Index>(b)).maxCoeff();
      targets_[b] = rewards[b] + cfg_.gamma * next;
    }
    model_.forward(x, q_, &tape_);
    double loss = masked_mse(q_, actions, targets_, dq_);

    if (algo_ == Algo::kCql && cfg_.cql_alpha != 0.0) {
      const double w = cfg_.cql_alpha / static_cast<double>(batch);
      double penalty = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const auto col = static_cast<Eigen::Index>(b);
        const double m = q_.col(col).maxCoeff();
        if (cfg_.cql_penalty == CqlPenalty::kLogsumexpMinusData) {
          const Eigen::VectorXd e = (q_.col(col).array() - m).exp().matrix();
          const double z = e.sum();
          penalty += m + std::log(z) - q_(static_cast<Eigen::Index>(actions[b]), col);
          dq_.col(col) += w * (e / z);
          dq_(static_cast<Eigen::Index>(actions[b]), col) -= w;
        } else {
          Eigen::Index arg = 0;
          q_.col(col).maxCoeff(&arg);
          penalty += m;
          dq_(arg, col) += w;
        }
      }
      loss += cfg_.cql_alpha * penalty / static_cast<double>(batch);
    }

    const double max_abs_q = q_.cwiseAbs().maxCoeff();
    if (!std::isfinite(loss) || !(max_abs_q <= cfg_.divergence_threshold)) {
      std::ostringstream msg;
      msg << "diverged at step " << steps_ + 1 << ": loss=" << loss << " max|Q|=" << max_abs_q;
      error_ = msg.str();
      return false;
    }
    last_loss_ = loss;
    std::fill(grad_.begin(), grad_.end(), 0.0);
    model_.backward(tape_, dq_, grad_);
    adam_step(adam_, model_.params(), grad_, cfg_.adam);
    ++steps_;
    if (steps_ % cfg_.target_update_period == 0) target_->params() = model_.params();
    return true;
  }

  double last_loss() const { return last_loss_; }
  const std::string& error() const { return error_; }

 private:
  QModel& model_;
  std::unique_ptr<QModel> target_;
  const TrainConfig& cfg_;
  Algo algo_;
  AdamState adam_;
  std::vector<double> grad_;
  std::vector<double> targets_;
  Matrix q_, qn_, dq_;
  Tape tape_;
  std::size_t steps_ = 0;
  double last_loss_ = 0.0;
  std::string error_;
};

/// Evaluation points: every ceil(fraction * steps) steps plus the last step.
std::size_t eval_interval(const TrainConfig& cfg) {
  const auto n = static_cast<std::size_t>(std::ceil(cfg.eval_fraction * static_cast<double>(cfg.learning_steps)));
  return std::max<std::size_t>(1, n);
}

class SeriesRecorder {
 public:
  SeriesRecorder(const TrainConfig& cfg, const Evaluator* evaluator, const QModel& model, RunResult& result)
      : cfg_(cfg), evaluator_(evaluator), model_(model), result_(result), interval_(eval_interval(cfg)) {}

  void after_step(std::size_t step, double loss) {
    loss_sum_ += loss;
    ++loss_count_;
    if (step % interval_ == 0 || step == cfg_.learning_steps) record(step);
  }

  void finish(std::size_t step) {
    if (evaluator_ == nullptr) return;
    if (result_.series.empty() || result_.series.back().step != step) record(step);
    result_.final_eval = last_;
  }

 private:
  void record(std::size_t step) {
    SeriesPoint p;
    p.step = step;
    p.loss = loss_count_ ? loss_sum_ / static_cast<double>(loss_count_) : 0.0;
    loss_sum_ = 0.0;
    loss_count_ = 0;
    if (evaluator_ != nullptr) {
      last_ = evaluator_->evaluate(model_, cfg_.n_eval_rollouts, derive_seed(cfg_.seed, {0xE7A1, step}));
      p.eval_return = last_.mean_return;
      p.normalized_return = last_.normalized_return;
      p.q_error = last_.q_error;
    }
    result_.series.push_back(p);
  }

  const TrainConfig& cfg_;
  const Evaluator* evaluator_;
  const QModel& model_;
  RunResult& result_;
  std::size_t interval_;
  double loss_sum_ = 0.0;
  std::size_t loss_count_ = 0;
  EvalResult last_;
};

RunResult run_offline(const Dataset& dataset, const FeatureEncoder& encoder, QModel& model,
                      const TrainConfig& cfg, const Evaluator* evaluator, Algo algo) {
  if (dataset.transitions.empty()) throw InvalidArgument("offline training: dataset is empty");
  if (model.input_dim() != encoder.dim() || model.n_actions() != encoder.n_actions()) {
    throw InvalidArgument("offline training: network shape does not match the environment");
  }
  if (cfg.batch_size == 0 || cfg.learning_steps == 0 || cfg.target_update_period == 0) {
    throw InvalidArgument("offline training: batch_size, learning_steps and target_update_period must be positive");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = dataset.size(), dim = encoder.dim();
  Matrix xs(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n));
  Matrix xns(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const Transition& tr = dataset.transitions[i];
    if (tr.a >= encoder.n_actions()) throw InvalidArgument("offline training: action out of range");
    encoder.encode(tr.s, std::span<double>(xs.col(static_cast<Eigen::Index>(i)).data(), dim));
    encoder.encode(tr.s_next, std::span<double>(xns.col(static_cast<Eigen::Index>(i)).data(), dim));
  }

  RunResult result;
  result.algorithm = algo == Algo::kDqn ? "dqn" : "cql";
  Learner learner(model, cfg, algo);
  SeriesRecorder recorder(cfg, evaluator, model, result);
  Rng rng(derive_seed(cfg.seed, {0xBA7C}));
  const std::size_t batch = cfg.batch_size;
  Matrix x(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(batch)), xn = x;
  std::vector<std::size_t> actions(batch);
  std::vector<double> rewards(batch);
  std::vector<char> done(batch);

  std::size_t step = 0;
  while (step < cfg.learning_steps) {
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t i = rng.index(n);
      const auto col = static_cast<Eigen::Index>(b), src = static_cast<Eigen::Index>(i);
      x.col(col) = xs.col(src);
      xn.col(col) = xns.col(src);
      actions[b] = dataset.transitions[i].a;
      rewards[b] = dataset.transitions[i].r;
      done[b] = dataset.transitions[i].done ? 1 : 0;
    }
    if (!learner.update(x, xn, actions, rewards, done)) {
      result.diverged = true;
      result.divergence_message = learner.error();
      break;
    }
    ++step;
    recorder.after_step(step, learner.last_loss());
  }
  result.steps_completed = step;
  recorder.finish(step);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace

RunResult offline_dqn(const Dataset& dataset, const FeatureEncoder& encoder, QModel& model,
                      const TrainConfig& cfg, const Evaluator* evaluator) {
  return run_offline(dataset, encoder, model, cfg, evaluator, Algo::kDqn);
}

RunResult offline_cql(const Dataset& dataset, const FeatureEncoder& encoder, QModel& model,
                      const TrainConfig& cfg, const Evaluator* evaluator) {
  return run_offline(dataset, encoder, model, cfg, evaluator, Algo::kCql);
}

// ─── Replay and online learning ─────────────────────────────────────────────

ReplayBuffer::ReplayBuffer(std::optional<std::size_t> capacity, std::size_t n_pairs)
    : capacity_(capacity), counts_(n_pairs, 0.0) {
  if (capacity && *capacity == 0) throw InvalidArgument("ReplayBuffer: capacity must be >= 1");
}

void ReplayBuffer::push(const Transition& tr, std::size_t pair) {
  if (pair >= counts_.size()) throw InvalidArgument("ReplayBuffer::push: pair out of range");
  items_.push_back({tr, pair});
  counts_[pair] += 1.0;
  if (capacity_ && items_.size() > *capacity_) {
    counts_[items_.front().pair] -= 1.0;
    items_.pop_front();
  }
}

double EpsilonSchedule::at(std::size_t env_step) const {
  if (decay_steps == 0 || env_step >= decay_steps) return decay_steps == 0 ? start : end;
  const double frac = static_cast<double>(env_step) / static_cast<double>(decay_steps);
  return start + (end - start) * frac;
}

RunResult online_q_learning(const Environment& env, QModel& model, ReplayBuffer& replay,
                            const OnlineTrainConfig& cfg, const Evaluator* evaluator) {
  const TrainConfig& tc = cfg.train;
  if (model.input_dim() != env.feature_dim() || model.n_actions() != env.n_actions()) {
    throw InvalidArgument("online_q_learning: network shape does not match the environment");
  }
  if (cfg.env_steps_per_iter == 0 || cfg.grad_steps_per_iter == 0 || tc.learning_steps == 0 ||
      tc.target_update_period == 0) {
    throw InvalidArgument("online_q_learning: S, G, learning_steps and target_update_period must be positive");
  }
  if (replay.capacity() && tc.batch_size > *replay.capacity()) {
    throw InvalidArgument("online_q_learning: replay capacity is below the batch size");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t dim = env.feature_dim(), n_a = env.n_actions();
  const std::size_t warmup = std::max({cfg.warmup, tc.batch_size, std::size_t{1}});

  RunResult result;
  result.algorithm = "online_q";
  Learner learner(model, tc, Algo::kDqn);
  SeriesRecorder recorder(tc, evaluator, model, result);
  Rng env_rng(derive_seed(tc.seed, {0x0E1}));
  Rng batch_rng(derive_seed(tc.seed, {0xBA7C}));

  StateVec s = env.sample_initial(env_rng);
  int t_in_episode = 0;
  std::size_t env_steps = 0, grad_steps = 0;
  Matrix xs(static_cast<Eigen::Index>(dim), 1), qs;
  Matrix x, xn;
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  std::vector<char> done;

  while (grad_steps < tc.learning_steps && !result.diverged) {
    for (std::size_t i = 0; i < cfg.env_steps_per_iter; ++i) {
      std::size_t a;
      if (env_rng.uniform() < cfg.epsilon.at(env_steps)) {
        a = env_rng.index(n_a);
      } else {
        env.features(s, std::span<double>(xs.data(), dim));
        model.forward(xs, qs);
        a = greedy_nan_safe(qs, 0);
      }
      const StepResult step = env.step(s, a, env_rng);
      replay.push({s, a, step.reward, step.next, step.terminal}, env.cell_of(s) * n_a + a);
      ++env_steps;
      ++t_in_episode;
      if (step.terminal || t_in_episode >= env.horizon()) {
        s = env.sample_initial(env_rng);
        t_in_episode = 0;
      } else {
        s = step.next;
      }
    }
    if (replay.size() < warmup) continue;
    for (std::size_t g = 0; g < cfg.grad_steps_per_iter && grad_steps < tc.learning_steps; ++g) {
      const std::size_t batch = tc.batch_size == 0 ? replay.size() : tc.batch_size;
      x.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(batch));
      xn.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(batch));
      actions.resize(batch);
      rewards.resize(batch);
      done.resize(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        const Transition& tr = tc.batch_size == 0 ? replay.at(b) : replay.sample(batch_rng);
        env.features(tr.s, std::span<double>(x.col(static_cast<Eigen::Index>(b)).data(), dim));
        env.features(tr.s_next, std::span<double>(xn.col(static_cast<Eigen::Index>(b)).data(), dim));
        actions[b] = tr.a;
        rewards[b] = tr.r;
        done[b] = tr.done ? 1 : 0;
      }
      if (!learner.update(x, xn, actions, rewards, done)) {
        result.diverged = true;
        result.divergence_message = learner.error();
        break;
      }
      ++grad_steps;
      recorder.after_step(grad_steps, learner.last_loss());
    }
  }
  result.steps_completed = grad_steps;
  recorder.finish(grad_steps);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace rldd
