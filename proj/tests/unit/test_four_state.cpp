#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rldd/approx.hpp"
#include "rldd/errors.hpp"
#include "rldd/four_state.hpp"
#include "rldd/rng.hpp"

using namespace rldd;
using namespace rldd::four_state;

namespace {

// Minimizes q (w1 - 100.3)^2 + (1 - q)(alpha w1 + 35)^2 by plain gradient descent.
double gd_minimizer(double q, double alpha) {
  double w = 0.0;
  const double lr = 0.2 / (q + alpha * alpha * (1 - q));
  for (int i = 0; i < 20000; ++i) {
    const double g = 2 * q * (w - 100.3) + 2 * (1 - q) * alpha * (alpha * w + 35);
    w -= lr * g;
  }
  return w;
}

}  // namespace

TEST_CASE("four-state MDP structure") {
  const TabularMdp mdp = build_four_state_mdp();
  CHECK(mdp.n_states() == 4);
  CHECK(mdp.n_actions() == 2);
  CHECK(mdp.gamma() == 1.0);
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t a = 0; a < 2; ++a) {
      double total = 0.0;
      for (std::size_t s2 = 0; s2 < 4; ++s2) total += mdp.transition(s, a, s2);
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  CHECK(mdp.transition(kS1, kA1, kS3) == doctest::Approx(0.99));
  CHECK(mdp.transition(kS1, kA1, kS2) == doctest::Approx(0.01));
  CHECK(mdp.is_terminal(kS3));
  CHECK(mdp.is_terminal(kS4));
  CHECK(mdp.reward(kS1, kA2) == -10.0);
  // Optimal return from s1: a1 pays 100 and reaches s2 w.p. 0.01, where a2 pays 30.
  CHECK(greedy_expected_return({60.0, 20.0, 80.0}, 1.25) == doctest::Approx(100.0 + 0.01 * 30.0));
  // Greedy a2 in s1: -10 then a2 in s2.
  CHECK(greedy_expected_return({0.0, 20.0, 80.0}, 1.25) == doctest::Approx(-10.0 + 30.0));
}

TEST_CASE("features") {
  CHECK_THROWS_AS(FourStateFeatures(1.5), InvalidArgument);
  CHECK_THROWS_AS(FourStateFeatures(0.9), InvalidArgument);
  const FourStateFeatures f(1.25);
  CHECK(f.phi(kS2A1) == std::array<double, 3>{1.25, 0, 0});
  CHECK(f.phi(kS2A2) == std::array<double, 3>{0, 0, 1});
  // LinearQ over one-hot states reproduces the WeightVec semantics.
  LinearQ lin = LinearQ::four_state(1.25);
  lin.params() = {3.0, -2.0, 7.0};
  Matrix x = Matrix::Identity(4, 4), q;
  lin.forward(x, q);
  const auto expect = WeightVec{3.0, -2.0, 7.0}.q_values(1.25);
  CHECK(q(0, 0) == expect[kS1A1]);
  CHECK(q(1, 0) == expect[kS1A2]);
  CHECK(q(0, 1) == expect[kS2A1]);
  CHECK(q(1, 1) == expect[kS2A2]);
  CHECK(q(0, 2) == 0.0);
  CHECK(q(1, 3) == 0.0);
}

TEST_CASE("oracle weights") {
  const WeightVec w = oracle_weights(0.7, 1.25);
  CHECK(std::abs(w.w1 - 48.8) < 0.05);
  CHECK(w.w2 == 20.0);
  CHECK(w.w3 == 30.0);
  const double closed = (0.7 * 100.3 + 1.25 * 0.3 * -35.0) / (0.7 + 1.25 * 1.25 * 0.3);
  CHECK(w.w1 == doctest::Approx(closed).epsilon(1e-14));

  Rng rng(3);
  for (int i = 0; i < 25; ++i) {
    const double q = rng.uniform(0.05, 0.95), a = rng.uniform(1.0, 1.49);
    CHECK(std::abs(oracle_weights(q, a).w1 - gd_minimizer(q, a)) <= 1e-6);
  }
  CHECK(oracle_weights(1.0, 1.25, true).w1 == doctest::Approx(100.3));
  CHECK_THROWS_AS(oracle_weights(1.0, 1.25), InvalidArgument);

  const WeightVec half = oracle_weights(0.5, 1.25);
  CHECK(half.w1 == doctest::Approx(22.07).epsilon(1e-3));
  CHECK(correct_action_count(half, 1.25) == 2);
}

TEST_CASE("oracle regime bounds") {
  const auto b = oracle_regime_bounds(1.25);
  CHECK(std::abs(b.lower - 0.483) <= 0.002);
  CHECK(std::abs(b.upper - 0.516) <= 0.002);
  // Interval where w1 > 20 and alpha w1 < 30, from the closed form directly.
  for (double a : {1.0, 1.1, 1.25, 1.4}) {
    const auto r = oracle_regime_bounds(a);
    CHECK(r.lower < r.upper);
    for (int k = 1; k < 1000; ++k) {
      const double q = k / 1000.0;
      if (std::abs(q - r.lower) < 1e-9 || std::abs(q - r.upper) < 1e-9) continue;
      const int c = correct_action_count(oracle_weights(q, a), a);
      CHECK((c == 2) == (q > r.lower && q < r.upper));
    }
  }
}

TEST_CASE("TD fixed points") {
  const auto t = td_fixed_point(0.7, 1.25);
  REQUIRE(t.converged);
  CHECK(std::abs(t.w.w1 - 49.0) <= 0.1);
  CHECK(std::abs(t.w.w2 - 51.3) <= 0.1);
  CHECK(std::abs(t.w.w3 - 30.0) <= 0.1);
  CHECK(correct_action_count(t.w, 1.25) == 0);
  for (double r : td_residuals(t.w, 0.7, 1.25)) CHECK(std::abs(r) <= 1e-9);

  // Branch alpha w1 < 30: the targets are those of the oracle.
  const auto h = td_fixed_point(0.5, 1.25);
  CHECK(h.w.w1 == doctest::Approx(22.07).epsilon(1e-3));
  CHECK(h.w.w2 == doctest::Approx(20.0));
  CHECK(correct_action_count(h.w, 1.25) == 2);

  // Branch alpha w1 > 30: w1 = (q 100 + 0.01 q a w1 - 35 a (1 - q)) / (q + a^2 (1 - q)).
  const double q = 0.6, a = 1.25;
  const double w1 = (q * 100.0 - 35.0 * a * (1 - q)) / (q + a * a * (1 - q) - 0.01 * q * a);
  const auto m = td_fixed_point(q, a);
  CHECK(m.w.w1 == doctest::Approx(w1).epsilon(1e-9));
  CHECK(m.w.w1 == doctest::Approx(34.91).epsilon(1e-3));
  CHECK(m.w.w2 == doctest::Approx(-10.0 + a * w1).epsilon(1e-9));
  CHECK(m.w.w2 == doctest::Approx(33.64).epsilon(1e-3));
  CHECK(correct_action_count(m.w, a) == 1);

  for (double eta : {0.01, 0.1, 0.3}) {
    const auto e = td_fixed_point(0.7, 1.25, eta, 1e-13);
    CHECK(e.w.w1 == doctest::Approx(t.w.w1).epsilon(1e-9));
    CHECK(e.w.w2 == doctest::Approx(t.w.w2).epsilon(1e-9));
  }
  const auto capped = td_fixed_point(0.7, 1.25, 0.1, 1e-12, 5);
  CHECK_FALSE(capped.converged);
  CHECK(capped.iterations == 5);
}

TEST_CASE("correct action count") {
  CHECK(correct_action_count({49.0, 51.3, 30.0}, 1.25) == 0);
  CHECK(correct_action_count({22.07, 20.0, 30.0}, 1.25) == 2);
  CHECK(correct_action_count({20.0, 20.0, 30.0}, 1.25) == 1);
  CHECK(correct_action_count({24.0, 20.0, 30.0}, 1.25) == 1);  // 1.25 * 24 == 30 is a tie
}

TEST_CASE("offline sweep") {
  const std::vector<double> alphas{1.25};
  const std::vector<double> qs{0.5, 0.6, 0.8};
  const auto rows = sweep_offline(alphas, qs, SolverMode::kTd);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].correct_actions == 2);
  CHECK(rows[1].correct_actions == 1);
  CHECK(rows[2].correct_actions == 0);
  const auto grid = linear_grid(0.0, 1.0, 0.005);
  CHECK(grid.size() == 201);
  CHECK(grid[100] == 0.5);
  CHECK(grid.back() == 1.0);
}

TEST_CASE("online simulation") {
  OnlineConfig cfg;
  cfg.alpha = 1.2;
  cfg.episodes = 10000;

  cfg.replay = ReplaySpec::uniform_synthetic();
  const auto uni = online_sim(cfg);
  CHECK(uni.back().correct_actions == 2);
  CHECK(uni.back().buffer_mu[kS1A1] == 0.25);
  CHECK(uni.back().w.w3 == doctest::Approx(30.0).epsilon(1e-6));

  cfg.replay = ReplaySpec::eps_greedy(1.0);
  const auto eps1 = online_sim(cfg);
  CHECK(eps1.back().correct_actions == 1);
  CHECK(eps1.back().w.w3 == doctest::Approx(30.0).epsilon(1e-6));
  // Uniform random actions: per episode (s1,a1) 0.5, (s1,a2) 0.5, and s2 is
  // reached w.p. 0.5 + 0.5 * 0.01, split evenly between its actions.
  const double s2 = 0.5 + 0.005;
  const double total = 1.0 + s2;
  const std::array<double, 4> analytic{0.5 / total, 0.5 / total, 0.5 * s2 / total, 0.5 * s2 / total};
  double tv = 0.0;
  for (std::size_t i = 0; i < 4; ++i) tv += 0.5 * std::abs(eps1.back().buffer_mu[i] - analytic[i]);
  CHECK(tv <= 0.02);

  cfg.replay = ReplaySpec::eps_greedy(0.05);
  const auto eps05 = online_sim(cfg);
  CHECK(uni.back().mean_q_error <= eps1.back().mean_q_error);
  CHECK(uni.back().mean_q_error <= eps05.back().mean_q_error);

  // Determinism and recording stride.
  cfg.record_every = 100;
  const auto a = online_sim(cfg), b = online_sim(cfg);
  CHECK(a.size() == 100);
  CHECK(a.back().episode == b.back().episode);
  CHECK(a.back().w.w1 == b.back().w.w1);

  // FIFO capacity bounds the buffer.
  cfg.replay = ReplaySpec::eps_greedy(1.0, 10);
  cfg.episodes = 50;
  const auto small = online_sim(cfg);
  double s = 0.0;
  for (double m : small.back().buffer_mu) s += m;
  CHECK(s == doctest::Approx(1.0));
}

TEST_CASE("trailing Q-error std") {
  std::vector<OnlineRecord> recs(4);
  const double vals[] = {10.0, 1.0, 2.0, 4.0};
  for (int i = 0; i < 4; ++i) recs[i].mean_q_error = vals[i];
  // Population std of {1, 2, 4}.
  const double m = 7.0 / 3.0;
  const double sd = std::sqrt(((1 - m) * (1 - m) + (2 - m) * (2 - m) + (4 - m) * (4 - m)) / 3.0);
  CHECK(trailing_q_error_std(recs, 3) == doctest::Approx(sd));
}
