#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rldd/errors.hpp"
#include "rldd/four_state.hpp"
#include "rldd/trainers.hpp"

using namespace rldd;

namespace {

// Every four-state pair in exact proportion: 100 copies per pair, successors
// split by their transition probabilities (99 : 1 after (s1, a1)).
Dataset exact_four_state_dataset(const Environment& env) {
  const TabularMdp& mdp = *env.tabular_mdp();
  Dataset d;
  d.spec.env_id = "fourstate";
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t a = 0; a < 2; ++a) {
      for (const auto& succ : mdp.successors(s, a)) {
        const auto copies = static_cast<int>(std::lround(succ.prob * 100));
        for (int i = 0; i < copies; ++i) {
          Transition t;
          t.s = {static_cast<double>(s), 0, 0, 0};
          t.a = a;
          t.r = mdp.reward(s, a);
          t.s_next = {static_cast<double>(succ.state), 0, 0, 0};
          t.done = mdp.is_terminal(succ.state);
          d.transitions.push_back(t);
        }
      }
    }
  }
  d.spec.size = d.size();
  return d;
}

TrainConfig small_config(std::uint64_t seed) {
  TrainConfig cfg = default_train_config("grid1");
  cfg.learning_steps = 300;
  cfg.target_update_period = 50;
  cfg.batch_size = 32;
  cfg.hidden = {16, 16};
  cfg.seed = seed;
  return cfg;
}

QTable table_of(const QModel& m, const Environment& env) {
  std::vector<double> v(env.n_cells() * env.n_actions());
  Matrix x(static_cast<Eigen::Index>(env.feature_dim()), 1), q;
  for (std::size_t c = 0; c < env.n_cells(); ++c) {
    env.features(env.cell_representative(c), std::span<double>(x.data(), env.feature_dim()));
    m.forward(x, q);
    for (std::size_t a = 0; a < env.n_actions(); ++a) v[c * env.n_actions() + a] = q(static_cast<Eigen::Index>(a), 0);
  }
  return QTable(env.n_cells(), env.n_actions(), v);
}

}  // namespace

TEST_CASE("config defaults and overrides") {
  const auto g = default_train_config("grid1");
  CHECK(g.learning_steps == 100000);
  CHECK(g.dataset_size == 50000);
  CHECK(g.batch_size == 100);
  CHECK(g.target_update_period == 1000);
  CHECK(g.cql_alpha == 1.0);
  CHECK(default_train_config("pendulum").learning_steps == 200000);
  CHECK(default_train_config("cartpole").dataset_size == 1000000);
  CHECK(default_train_config("fourstate").gamma == 1.0);
  CHECK_THROWS_AS(default_train_config("pong"), InvalidArgument);

  const auto o = apply_overrides(g, {{"lr", 0.01}, {"hidden", {8}}, {"cql_penalty", "max_q"}});
  CHECK(o.adam.lr == 0.01);
  CHECK(o.hidden == std::vector<std::size_t>{8});
  CHECK(o.cql_penalty == CqlPenalty::kMaxQ);
  CHECK_THROWS_AS(apply_overrides(g, {{"learning_rate", 0.1}}), InvalidArgument);
  CHECK_THROWS_AS(apply_overrides(g, {{"batch_size", 0}}), InvalidArgument);
  CHECK_THROWS_AS(apply_overrides(g, {{"lr", "fast"}}), InvalidArgument);
  const auto round = apply_overrides(default_train_config("grid1"), to_json(o));
  CHECK(to_json(round) == to_json(o));
}

TEST_CASE("normalization") {
  CHECK(normalize_return(5.0, 10.0, 0.0) == 0.5);
  CHECK(normalize_return(20.0, 10.0, 0.0) == kNormalizedMax);
  CHECK(normalize_return(-20.0, 10.0, 0.0) == kNormalizedMin);
  CHECK(normalize_return(-150.0, -100.0, -200.0) == 0.5);
  CHECK(normalize_return(std::nan(""), 1.0, 0.0) == kNormalizedMin);
}

TEST_CASE("cql with zero alpha is dqn") {
  const auto env = make_env("grid1", 2);
  const QTable q = value_iteration(*env->tabular_mdp());
  const Dataset d = generate_dataset(*env, q, BehaviorSpec::eps_greedy(0.3), 2000, 3);
  FeatureEncoder enc(*env);
  TrainConfig cfg = small_config(4);
  cfg.cql_alpha = 0.0;
  auto a = make_network(*env, cfg, 5), b = make_network(*env, cfg, 5);
  const auto ra = offline_dqn(d, enc, *a, cfg, nullptr);
  const auto rb = offline_cql(d, enc, *b, cfg, nullptr);
  CHECK(a->params() == b->params());
  CHECK(ra.steps_completed == 300);
  CHECK(rb.algorithm == "cql");

  // Same seed, same result; different seed, different batches.
  auto c = make_network(*env, cfg, 5), e = make_network(*env, cfg, 5);
  offline_dqn(d, enc, *c, cfg, nullptr);
  CHECK(c->params() == a->params());
  TrainConfig other = cfg;
  other.seed = 99;
  offline_dqn(d, enc, *e, other, nullptr);
  CHECK(e->params() != a->params());
}

TEST_CASE("uniform minibatch sampling") {
  // Chi-square goodness of fit of 1e6 replay draws over 1000 items.
  ReplayBuffer buf(std::nullopt, 1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    Transition t;
    t.a = i;
    buf.push(t, i);
  }
  Rng rng(derive_seed(7, {0xBA7C}));
  std::vector<double> hits(1000, 0.0);
  const std::size_t draws = 1000000;
  for (std::size_t i = 0; i < draws; ++i) hits[buf.sample(rng).a] += 1.0;
  const double expect = static_cast<double>(draws) / 1000.0;
  double chi2 = 0.0;
  for (double h : hits) chi2 += (h - expect) * (h - expect) / expect;
  // 999 degrees of freedom: mean 999, sd sqrt(2 * 999).
  CHECK(std::abs(chi2 - 999.0) <= 4.0 * std::sqrt(2.0 * 999.0));
}

TEST_CASE("replay fifo") {
  ReplayBuffer buf(3, 4);
  for (std::size_t i = 0; i < 5; ++i) {
    Transition t;
    t.a = i;
    buf.push(t, i % 4);
  }
  CHECK(buf.size() == 3);
  CHECK(buf.at(0).a == 2);
  CHECK(buf.at(2).a == 4);
  CHECK(buf.counts() == std::vector<double>{1, 0, 1, 1});
  CHECK_THROWS_AS(ReplayBuffer(0, 4), InvalidArgument);
  CHECK_THROWS_AS(buf.push(Transition{}, 4), InvalidArgument);

  EpsilonSchedule sched{1.0, 0.1, 100};
  CHECK(sched.at(0) == 1.0);
  CHECK(sched.at(50) == doctest::Approx(0.55));
  CHECK(sched.at(500) == 0.1);
}

TEST_CASE("four-state offline fit") {
  const auto env = make_env("fourstate");
  const Dataset d = exact_four_state_dataset(*env);
  REQUIRE(d.size() == 400);
  const Reference ref = compute_reference(*env, 1);
  Evaluator ev(*env, &ref);
  FeatureEncoder enc(*env);
  TrainConfig cfg = default_train_config("fourstate");
  cfg.learning_steps = 20000;
  cfg.target_update_period = 100;
  cfg.adam.lr = 0.05;
  cfg.seed = 3;
  LinearQ model = LinearQ::action_blocked(4, 2);
  const auto r = offline_dqn(d, enc, model, cfg, &ev);
  CHECK_FALSE(r.diverged);
  const QTable q = table_of(model, *env);
  CHECK(argmax_action(q.row(four_state::kS1)) == four_state::kA1);
  CHECK(argmax_action(q.row(four_state::kS2)) == four_state::kA2);
  CHECK(ev.q_error(model) <= 1.0);
  CHECK(r.final_eval.normalized_return == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("cql is conservative off the data") {
  // Only (s1, a1) and (s2, a2) are logged.
  const auto env = make_env("fourstate");
  Dataset d;
  for (const auto& t : exact_four_state_dataset(*env).transitions)
    if ((t.s[0] == 0 && t.a == 0) || (t.s[0] == 1 && t.a == 1)) d.transitions.push_back(t);
  FeatureEncoder enc(*env);
  TrainConfig cfg = default_train_config("fourstate");
  cfg.learning_steps = 5000;
  cfg.target_update_period = 100;
  cfg.adam.lr = 0.05;
  cfg.seed = 8;
  LinearQ dqn = LinearQ::action_blocked(4, 2), cql = LinearQ::action_blocked(4, 2);
  offline_dqn(d, enc, dqn, cfg, nullptr);
  offline_cql(d, enc, cql, cfg, nullptr);
  const QTable qd = table_of(dqn, *env), qc = table_of(cql, *env);
  CHECK(qc(0, 1) < qd(0, 1) - 1.0);
  CHECK(qc(1, 0) < qd(1, 0) - 1.0);
  CHECK(qc(0, 0) <= qd(0, 0));
  // The logged actions stay preferred.
  CHECK(qc(0, 0) > qc(0, 1));
  CHECK(qc(1, 1) > qc(1, 0));
}

TEST_CASE("divergence is reported") {
  const auto env = make_env("fourstate");
  const Dataset d = exact_four_state_dataset(*env);
  FeatureEncoder enc(*env);
  TrainConfig cfg = default_train_config("fourstate");
  cfg.learning_steps = 1000;
  cfg.divergence_threshold = 10.0;
  cfg.adam.lr = 1.0;
  LinearQ model = LinearQ::action_blocked(4, 2);
  const auto r = offline_dqn(d, enc, model, cfg, nullptr);
  CHECK(r.diverged);
  CHECK(r.steps_completed < 1000);
  CHECK(r.divergence_message.find("diverged") != std::string::npos);
  CHECK(to_json(r)["diverged"] == true);

  Dataset empty;
  CHECK_THROWS_AS(offline_dqn(empty, enc, model, cfg, nullptr), InvalidArgument);
  Mlp wrong({3, 2}, Activation::kRelu, 0);
  CHECK_THROWS_AS(offline_dqn(d, enc, wrong, cfg, nullptr), InvalidArgument);
}

TEST_CASE("evaluator") {
  const auto env = make_env("grid1", 1);
  const Reference ref = compute_reference(*env, 5);
  CHECK(ref.n_baseline_episodes == kBaselineEpisodes);
  CHECK(ref.r_opt > ref.r_rand);
  Evaluator ev(*env, &ref);
  const TabularMdp& mdp = *env->tabular_mdp();
  std::vector<std::size_t> greedy(mdp.n_states());
  for (std::size_t s = 0; s < mdp.n_states(); ++s) greedy[s] = argmax_action(ref.q.row(s));
  const auto opt = ev.evaluate(PolicyTable::deterministic(greedy, 5), 50, 6);
  CHECK(opt.normalized_return == doctest::Approx(1.0).epsilon(0.02));
  const auto rnd = ev.evaluate(PolicyTable::uniform(mdp.n_states(), 5), 2000, 7);
  CHECK(std::abs(rnd.normalized_return) <= 0.1);

  const auto four = make_env("fourstate");
  const Reference fref = compute_reference(*four, 2);
  Evaluator fev(*four, &fref);
  LinearQ exact = LinearQ::action_blocked(4, 2);
  // action_blocked weights: block a holds the per-state values of action a.
  exact.params() = {100.3, 20.0, 0.0, 0.0, 20.0, 30.0, 0.0, 0.0};
  const auto res = fev.evaluate(exact, 20000, 3);
  CHECK(res.mean_return == doctest::Approx(100.3).epsilon(1e-3));
  CHECK(res.has_q_error);
  const QTable fq = fref.q;
  CHECK(fq(0, 0) == doctest::Approx(100.3));
  CHECK(fq(0, 1) == doctest::Approx(20.0));
  CHECK(fq(1, 0) == doctest::Approx(-35.0));
  CHECK(fq(1, 1) == doctest::Approx(30.0));
  // Q-error: only (s2, a1) is off, by 55, over 8 pairs.
  CHECK(res.q_error == doctest::Approx(55.0 / 8.0));
}

TEST_CASE("online q-learning on the four-state MDP") {
  // Full-batch updates from an epsilon = 1 replay settle at the TD fixed
  // point of the buffer's q ratio.
  const double alpha = 1.2;
  const auto env = make_env("fourstate");
  LinearQ model = LinearQ::four_state(alpha);
  ReplayBuffer replay(2000, env->n_cells() * env->n_actions());
  OnlineTrainConfig cfg;
  cfg.train = default_train_config("fourstate");
  cfg.train.batch_size = 0;
  cfg.train.learning_steps = 20000;
  cfg.train.target_update_period = 1;
  cfg.train.adam.lr = 0.05;
  cfg.train.seed = 4;
  cfg.epsilon = {1.0, 1.0, 0};
  cfg.warmup = 2000;
  const auto r = online_q_learning(*env, model, replay, cfg, nullptr);
  CHECK_FALSE(r.diverged);
  const auto& counts = replay.counts();
  const double q = counts[0] / (counts[0] + counts[2]);
  CHECK(q > 0.6);
  CHECK(q < 0.7);
  const auto fp = four_state::td_fixed_point(q, alpha);
  const four_state::WeightVec w{model.params()[0], model.params()[1], model.params()[2]};
  CHECK(std::abs(w.w1 - fp.w.w1) <= 1.0);
  CHECK(std::abs(w.w2 - fp.w.w2) <= 1.0);
  CHECK(std::abs(w.w3 - 30.0) <= 1.0);
  CHECK(four_state::correct_action_count(w, alpha) == four_state::correct_action_count(fp.w, alpha));
}

TEST_CASE("online q-learning on grid 1") {
  const auto env = make_env("grid1", 3);
  const Reference ref = compute_reference(*env, 1);
  Evaluator ev(*env, &ref);
  OnlineTrainConfig cfg;
  cfg.train = default_train_config("grid1");
  cfg.train.learning_steps = 20000;
  cfg.train.target_update_period = 500;
  cfg.train.seed = 5;
  cfg.train.n_eval_rollouts = 5;
  cfg.epsilon = {0.1, 0.1, 0};
  auto model = make_network(*env, cfg.train, derive_seed(5, {0x1E7}));
  ReplayBuffer replay(std::nullopt, env->n_cells() * env->n_actions());
  const auto r = online_q_learning(*env, *model, replay, cfg, &ev);
  CHECK_FALSE(r.diverged);
  // One environment step per gradient step, after 99 warm-up steps.
  CHECK(replay.size() == 20000 + 99);
  CHECK(r.final_eval.normalized_return >= 0.8);
}

TEST_CASE("series and checkpoint files") {
  const auto env = make_env("grid1", 2);
  const Reference ref = compute_reference(*env, 1, 20);
  Evaluator ev(*env, &ref);
  const Dataset d = generate_dataset(*env, ref.q, BehaviorSpec::eps_greedy(0.5), 1000, 3);
  FeatureEncoder enc(*env);
  TrainConfig cfg = small_config(6);
  cfg.eval_fraction = 0.25;
  auto model = make_network(*env, cfg, 1);
  const auto r = offline_cql(d, enc, *model, cfg, &ev);
  // 300 steps, evaluated every 75.
  REQUIRE(r.series.size() == 4);
  CHECK(r.series.back().step == 300);
  CHECK(r.final_eval.normalized_return == r.series.back().normalized_return);

  const auto dir = std::filesystem::temp_directory_path() / "rldd_test_trainers";
  std::filesystem::create_directories(dir);
  write_series_csv(r, (dir / "series.csv").string());
  std::ifstream in(dir / "series.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("# ", 0) == 0);
  std::getline(in, header);
  CHECK(header == "step,loss,eval_return,normalized_return,q_error");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 4);
  std::filesystem::remove_all(dir);
}
