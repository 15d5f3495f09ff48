#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "rldd/envs.hpp"
#include "rldd/errors.hpp"
#include "rldd/four_state.hpp"
#include "rldd/mdp.hpp"
#include "rldd/rng.hpp"

using namespace rldd;

namespace {

// s0 -> s1 -> s2 under action 0 ("right"); action 1 stays. s2 absorbs and pays
// 1 per step under either action.
TabularMdp chain3(double gamma) {
  std::vector<std::vector<Successor>> rows(6);
  rows[0] = {{1, 1.0}};
  rows[1] = {{0, 1.0}};
  rows[2] = {{2, 1.0}};
  rows[3] = {{1, 1.0}};
  rows[4] = {{2, 1.0}};
  rows[5] = {{2, 1.0}};
  std::vector<double> r{0, 0, 0, 0, 1, 1};
  return TabularMdp(3, 2, rows, r, gamma, {1, 0, 0}, {false, false, false}, 20);
}

// Dense random MDP without terminals.
TabularMdp random_mdp(std::size_t n_s, std::size_t n_a, std::uint64_t seed, int horizon, double gamma) {
  Rng rng(seed);
  std::vector<std::vector<Successor>> rows(n_s * n_a);
  std::vector<double> r(n_s * n_a);
  for (std::size_t p = 0; p < n_s * n_a; ++p) {
    std::vector<double> w(n_s);
    double z = 0.0;
    for (auto& v : w) z += (v = rng.uniform() + 0.05);
    for (std::size_t s2 = 0; s2 < n_s; ++s2) rows[p].push_back({s2, w[s2] / z});
    r[p] = rng.uniform(-1.0, 1.0);
  }
  std::vector<double> p0(n_s, 0.0);
  p0[0] = 1.0;
  return TabularMdp(n_s, n_a, rows, r, gamma, p0, std::vector<bool>(n_s, false), horizon);
}

}  // namespace

TEST_CASE("four-state value iteration reproduces Q*") {
  const TabularMdp mdp = four_state::build_four_state_mdp();
  const QTable q = value_iteration(mdp);
  CHECK(std::abs(q(0, 0) - 100.3) <= 1e-9);
  CHECK(std::abs(q(0, 1) - 20.0) <= 1e-9);
  CHECK(std::abs(q(1, 0) + 35.0) <= 1e-9);
  CHECK(std::abs(q(1, 1) - 30.0) <= 1e-9);
  CHECK(q(2, 0) == 0.0);
  CHECK(q(3, 1) == 0.0);
}

TEST_CASE("single terminal state has zero Q") {
  TabularMdp mdp(1, 1, {{{0, 1.0}}}, {0.0}, 0.9, {1.0}, {true}, 5);
  const QTable q = value_iteration(mdp);
  CHECK(q(0, 0) == 0.0);
}

TEST_CASE("chain Q matches a brute-force finite-horizon backup") {
  const double gamma = 0.9;
  const TabularMdp mdp = chain3(gamma);
  const QTable q = value_iteration(mdp);
  // Hand recursion: V(s2) = 1/(1-g); Q(s1,right) = g V(s2); Q(s0,right) = g^2 V(s2).
  const double v2 = 1.0 / (1.0 - gamma);
  CHECK(q(2, 0) == doctest::Approx(v2).epsilon(1e-9));
  CHECK(q(1, 0) == doctest::Approx(gamma * v2).epsilon(1e-9));
  CHECK(q(0, 0) == doctest::Approx(gamma * gamma * v2).epsilon(1e-9));
  CHECK(q(0, 1) == doctest::Approx(gamma * gamma * gamma * v2).epsilon(1e-9));

  // Independent dense backup, iterated far past convergence.
  double Q[3][2] = {};
  const int next[3][2] = {{1, 0}, {2, 1}, {2, 2}};
  const double rew[3][2] = {{0, 0}, {0, 0}, {1, 1}};
  for (int it = 0; it < 2000; ++it) {
    double N[3][2];
    for (int s = 0; s < 3; ++s) {
      for (int a = 0; a < 2; ++a) {
        const int s2 = next[s][a];
        N[s][a] = rew[s][a] + gamma * std::max(Q[s2][0], Q[s2][1]);
      }
    }
    std::copy(&N[0][0], &N[0][0] + 6, &Q[0][0]);
  }
  for (int s = 0; s < 3; ++s) {
    for (int a = 0; a < 2; ++a) CHECK(q(s, a) == doctest::Approx(Q[s][a]).epsilon(1e-9));
  }
}

TEST_CASE("value iteration output is a Bellman fixed point") {
  const TabularMdp mdp = random_mdp(6, 3, 11, 50, 0.95);
  ValueIterationOptions opts;
  opts.tol = 1e-9;
  const QTable q = value_iteration(mdp, opts);
  const QTable b = bellman_backup(mdp, q);
  for (std::size_t i = 0; i < q.values().size(); ++i) CHECK(std::abs(b.values()[i] - q.values()[i]) <= 1e-9);
}

TEST_CASE("value iteration reports non-convergence") {
  const TabularMdp mdp = random_mdp(4, 2, 3, 50, 0.99);
  ValueIterationOptions opts;
  opts.max_sweeps = 3;
  CHECK_THROWS_AS(value_iteration(mdp, opts), DivergedError);
}

TEST_CASE("policy evaluation never exceeds Q*") {
  const TabularMdp mdp = random_mdp(5, 3, 21, 50, 0.9);
  const QTable qstar = value_iteration(mdp);
  Rng rng(4);
  for (int k = 0; k < 10; ++k) {
    std::vector<double> probs(15);
    for (std::size_t s = 0; s < 5; ++s) {
      double z = 0.0;
      for (std::size_t a = 0; a < 3; ++a) z += (probs[s * 3 + a] = rng.uniform());
      for (std::size_t a = 0; a < 3; ++a) probs[s * 3 + a] /= z;
    }
    const QTable qpi = policy_evaluation(mdp, PolicyTable(5, 3, probs));
    for (std::size_t i = 0; i < 15; ++i) CHECK(qpi.values()[i] <= qstar.values()[i] + 1e-8);
  }
}

TEST_CASE("construction validates invariants") {
  CHECK_THROWS_AS(TabularMdp(1, 1, {{{0, 0.5}}}, {0.0}, 0.9, {1.0}, {false}, 5), InvalidArgument);
  CHECK_THROWS_AS(TabularMdp(1, 1, {{{0, 1.0}}}, {0.0}, 0.9, {0.5}, {false}, 5), InvalidArgument);
  // gamma = 1 without a reachable terminal is improper.
  CHECK_THROWS_AS(TabularMdp(1, 1, {{{0, 1.0}}}, {1.0}, 1.0, {1.0}, {false}, 5), InvalidArgument);
  CHECK_THROWS_AS(PolicyTable(1, 2, {0.7, 0.7}), InvalidArgument);
}

TEST_CASE("json round trip preserves the MDP") {
  const TabularMdp mdp = four_state::build_four_state_mdp();
  const TabularMdp back = TabularMdp::from_json(mdp.to_json());
  CHECK(back.n_states() == mdp.n_states());
  CHECK(back.gamma() == mdp.gamma());
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t a = 0; a < 2; ++a) {
      CHECK(back.reward(s, a) == mdp.reward(s, a));
      for (std::size_t s2 = 0; s2 < 4; ++s2) CHECK(back.transition(s, a, s2) == mdp.transition(s, a, s2));
    }
  }
}

TEST_CASE("greedy policy enumeration") {
  SUBCASE("unique max") {
    const auto set = greedy_policies(QTable(1, 2, {1.0, 0.2}), 1e-6);
    REQUIRE(set.policies.size() == 1);
    CHECK(set.policies[0](0, 0) == 1.0);
  }
  SUBCASE("exact tie") {
    const auto set = greedy_policies(QTable(1, 2, {1.0, 1.0}), 1e-6);
    REQUIRE(set.policies.size() == 2);
    CHECK(set.policies[0](0, 0) == 1.0);
    CHECK(set.policies[1](0, 1) == 1.0);
  }
  SUBCASE("cap truncates") {
    const auto set = greedy_policies(QTable(13, 2, std::vector<double>(26, 0.0)), 0.0, 4096);
    CHECK(set.policies.size() == 4096);
    CHECK(set.total_count == 8192);
    CHECK(set.truncated);
  }
  SUBCASE("grid 1 has several optimal policies") {
    const TabularBuild g = build_grid(GridVariant::kGrid1, 0);
    const auto set = greedy_policies(value_iteration(g.mdp), 1e-9);
    CHECK(set.total_count >= 2);
  }
  CHECK(argmax_action(std::vector<double>{0.5, 0.7, 0.7}) == 1);
}

TEST_CASE("behavior policies") {
  const QTable q(2, 2, {1.0, 0.0, 3.0, 5.0});
  SUBCASE("eps = 1 is uniform") {
    const PolicyTable pi = behavior_policy(q, BehaviorSpec::eps_greedy(1.0));
    for (double p : pi.probs()) CHECK(p == doctest::Approx(0.5));
  }
  SUBCASE("eps = 0 is greedy") {
    const PolicyTable pi = behavior_policy(q, BehaviorSpec::eps_greedy(0.0));
    CHECK(pi(0, 0) == 1.0);
    CHECK(pi(1, 1) == 1.0);
  }
  SUBCASE("ties split or go low") {
    const QTable t(1, 3, {2.0, 2.0, 0.0});
    const PolicyTable split = behavior_policy(t, BehaviorSpec::eps_greedy(0.3));
    CHECK(split(0, 0) == doctest::Approx(0.35 + 0.1));
    CHECK(split(0, 2) == doctest::Approx(0.1));
    const PolicyTable low = behavior_policy(t, BehaviorSpec::eps_greedy(0.3), TieBreak::kLowestIndex);
    CHECK(low(0, 0) == doctest::Approx(0.7 + 0.1));
    CHECK(low(0, 1) == doctest::Approx(0.1));
  }
  SUBCASE("boltzmann softmax") {
    const PolicyTable pi = behavior_policy(QTable(1, 2, {1.0, 0.0}), BehaviorSpec::boltzmann(1.0));
    const double e = std::exp(1.0);
    CHECK(pi(0, 0) == doctest::Approx(e / (e + 1.0)).epsilon(1e-12));
    CHECK(pi(0, 1) == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-12));
  }
  SUBCASE("negative temperature reverses preferences") {
    Rng rng(9);
    std::vector<double> v(12);
    for (auto& x : v) x = rng.uniform(-3, 3);
    const QTable r(4, 3, v);
    const PolicyTable pos = behavior_policy(r, BehaviorSpec::boltzmann(0.7));
    const PolicyTable neg = behavior_policy(r, BehaviorSpec::boltzmann(-0.7));
    for (std::size_t s = 0; s < 4; ++s) {
      CHECK(argmax_action(pos.row(s)) == argmax_action(r.row(s)));
      std::vector<double> flipped(r.row(s).begin(), r.row(s).end());
      for (auto& x : flipped) x = -x;
      CHECK(argmax_action(neg.row(s)) == argmax_action(flipped));
    }
  }
  SUBCASE("large Q values stay finite") {
    const PolicyTable pi = behavior_policy(QTable(1, 2, {1000.0, 0.0}), BehaviorSpec::boltzmann(0.01));
    CHECK(pi(0, 0) == 1.0);
  }
  CHECK_THROWS_AS(validate_behavior(BehaviorSpec::boltzmann(1e-4)), InvalidArgument);
  CHECK_THROWS_AS(validate_behavior(BehaviorSpec::eps_greedy(1.5)), InvalidArgument);
}

TEST_CASE("occupancy measures") {
  SUBCASE("single self-loop") {
    TabularMdp mdp(1, 1, {{{0, 1.0}}}, {0.0}, 0.9, {1.0}, {false}, 10);
    const auto d = occupancy_sa(mdp, PolicyTable::uniform(1, 1), OccupancyMode::kDiscounted, 0, 0);
    CHECK(d[0] == doctest::Approx(1.0));
  }
  SUBCASE("four-state always-a1 visitation ratio is about 100:1") {
    const TabularMdp mdp = four_state::build_four_state_mdp();
    const std::vector<std::size_t> acts{0, 0, 0, 0};
    const auto d =
        occupancy_sa(mdp, PolicyTable::deterministic(acts, 2), OccupancyMode::kEpisodicVisitation, 200000, 5);
    const double ratio = d[mdp.pair_index(0, 0)] / d[mdp.pair_index(1, 0)];
    CHECK(ratio == doctest::Approx(100.0).epsilon(0.15));
  }
  SUBCASE("grid 1 optimal visitation is narrow") {
    const TabularBuild g = build_grid(GridVariant::kGrid1, 0);
    const QTable q = value_iteration(g.mdp);
    const PolicyTable pi = behavior_policy(q, BehaviorSpec::eps_greedy(0.0), TieBreak::kLowestIndex);
    const auto d = occupancy_sa(g.mdp, pi, OccupancyMode::kEpisodicVisitation, 500, 2);
    std::size_t support = 0;
    for (double p : d.probs()) support += p > 0.0;
    CHECK(support <= 50);
  }
  SUBCASE("discounted occupancy agrees with Monte Carlo") {
    const double gamma = 0.8;
    const int horizon = 30;
    const TabularMdp mdp = random_mdp(4, 2, 17, horizon, gamma);
    const PolicyTable pi(4, 2, {0.3, 0.7, 0.5, 0.5, 0.9, 0.1, 0.2, 0.8});
    const auto exact = occupancy_sa(mdp, pi, OccupancyMode::kDiscounted, 0, 0);
    double norm = 0.0;
    for (int t = 0; t < horizon; ++t) norm += std::pow(gamma, t);
    const int n = 20000;
    std::vector<double> sum(8, 0.0), sum_sq(8, 0.0);
    Rng rng(123);
    for (int e = 0; e < n; ++e) {
      std::vector<double> v(8, 0.0);
      double disc = 1.0;
      run_tabular_episode(mdp, pi, rng, [&](const TabularStep& st) {
        v[st.s * 2 + st.a] += disc / norm;
        disc *= gamma;
      });
      for (int p = 0; p < 8; ++p) {
        sum[p] += v[p];
        sum_sq[p] += v[p] * v[p];
      }
    }
    for (int p = 0; p < 8; ++p) {
      const double m = sum[p] / n;
      const double sd = std::sqrt(std::max(0.0, sum_sq[p] / n - m * m) / n);
      CHECK(std::abs(exact[p] - m) <= 3.0 * sd + 1e-12);
    }
  }
}

TEST_CASE("seed derivation is pure and order sensitive") {
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) CHECK(a.uniform() == b.uniform());
}
