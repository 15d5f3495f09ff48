#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <deque>
#include <limits>
#include <numbers>

#include "rldd/envs.hpp"
#include "rldd/errors.hpp"
#include "rldd/mdp.hpp"

using namespace rldd;

namespace {

// Shortest free-cell path length between start and goal, four-neighbourhood.
int bfs_distance(const GridLayout& g) {
  std::vector<int> dist(g.rows * g.cols, -1);
  std::deque<std::pair<std::size_t, std::size_t>> queue{{g.start_row, g.start_col}};
  dist[g.start_row * g.cols + g.start_col] = 0;
  const int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, 1, -1};
  while (!queue.empty()) {
    auto [r, c] = queue.front();
    queue.pop_front();
    for (int k = 0; k < 4; ++k) {
      const long nr = static_cast<long>(r) + dr[k], nc = static_cast<long>(c) + dc[k];
      if (nr < 0 || nc < 0 || nr >= static_cast<long>(g.rows) || nc >= static_cast<long>(g.cols)) continue;
      if (g.is_wall(nr, nc) || dist[nr * g.cols + nc] >= 0) continue;
      dist[nr * g.cols + nc] = dist[r * g.cols + c] + 1;
      queue.emplace_back(nr, nc);
    }
  }
  return dist[g.goal_row * g.cols + g.goal_col];
}

std::size_t start_state(const TabularMdp& mdp) {
  for (std::size_t s = 0; s < mdp.n_states(); ++s)
    if (mdp.initial_dist()[s] == 1.0) return s;
  return mdp.n_states();
}

double max_row(const QTable& q, std::size_t s) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : q.row(s)) m = std::max(m, v);
  return m;
}

// Undiscounted finite-horizon optimal value from the initial distribution.
double finite_horizon_optimum(const TabularMdp& mdp) {
  std::vector<double> v(mdp.n_states(), 0.0);
  for (int t = 0; t < mdp.episode_horizon(); ++t) {
    std::vector<double> nv(mdp.n_states());
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
        double q = mdp.reward(s, a);
        for (std::size_t s2 = 0; s2 < mdp.n_states(); ++s2) q += mdp.transition(s, a, s2) * v[s2];
        best = std::max(best, q);
      }
      nv[s] = best;
    }
    v = nv;
  }
  double total = 0.0;
  for (std::size_t s = 0; s < mdp.n_states(); ++s) total += mdp.initial_dist()[s] * v[s];
  return total;
}

// Cart-pole Euler step with the usual constants, written out independently.
StateVec cartpole_reference(const StateVec& s, int push) {
  const double g = 9.8, mc = 1.0, mp = 0.1, len = 0.5, f = push ? 10.0 : -10.0, dt = 0.02;
  const double m = mc + mp;
  const double tmp = (f + mp * len * s[3] * s[3] * std::sin(s[2])) / m;
  const double th_acc =
      (g * std::sin(s[2]) - std::cos(s[2]) * tmp) / (len * (4.0 / 3.0 - mp * std::cos(s[2]) * std::cos(s[2]) / m));
  const double x_acc = tmp - mp * len * th_acc * std::cos(s[2]) / m;
  return {s[0] + dt * s[1], s[1] + dt * x_acc, s[2] + dt * s[3], s[3] + dt * th_acc};
}

}  // namespace

TEST_CASE("grid 1") {
  const auto build = build_grid(GridVariant::kGrid1, 7);
  const TabularMdp& mdp = build.mdp;
  CHECK(mdp.n_states() == 64);
  CHECK(mdp.n_actions() == 5);
  CHECK(mdp.n_pairs() == 320);
  CHECK(mdp.gamma() == 0.9);
  CHECK(mdp.episode_horizon() == 50);

  const auto layout = load_grid_layout(data_dir() + "/grids/grid1.txt");
  const std::size_t goal = grid_state_index(layout, layout.goal_row, layout.goal_col);
  const std::size_t start = grid_state_index(layout, layout.start_row, layout.start_col);
  CHECK(start_state(mdp) == start);
  for (std::size_t a = 0; a < 5; ++a) CHECK(mdp.reward(goal, a) == 1.0);
  CHECK(mdp.transition(goal, kStay, goal) == 1.0);
  CHECK(mdp.reward(start, kUp) == 0.0);

  // Interior moves are deterministic.
  const std::size_t mid = grid_state_index(layout, 3, 3);
  CHECK(mdp.transition(mid, kUp, grid_state_index(layout, 2, 3)) == 1.0);
  CHECK(mdp.transition(mid, kRight, grid_state_index(layout, 3, 4)) == 1.0);

  // Bottom-left corner pushing left: stay 0.99, else one of two free neighbours.
  CHECK(mdp.transition(start, kLeft, start) == doctest::Approx(0.99));
  CHECK(mdp.transition(start, kLeft, grid_state_index(layout, 6, 0)) == doctest::Approx(0.005));
  CHECK(mdp.transition(start, kLeft, grid_state_index(layout, 7, 1)) == doctest::Approx(0.005));

  // Optimal value from start: zero reward until the goal, then 1 per step.
  const int d = bfs_distance(layout);
  CHECK(d == 14);
  const QTable q = value_iteration(mdp);
  CHECK(max_row(q, start) == doctest::Approx(std::pow(0.9, d) / (1.0 - 0.9)).epsilon(1e-8));

  // Features: 8-dim uniform [-1, 1], reproducible from the seed.
  CHECK(build.features.dim() == 8);
  for (double v : build.features.values()) CHECK((v >= -1.0 && v <= 1.0));
  CHECK(build_grid(GridVariant::kGrid1, 7).features.values() == build.features.values());
  CHECK(build_grid(GridVariant::kGrid1, 8).features.values() != build.features.values());
}

TEST_CASE("grid 2 walls") {
  const auto layout = load_grid_layout(data_dir() + "/grids/grid2.txt");
  CHECK(layout.rows == 8);
  CHECK(layout.cols == 8);
  std::size_t walls = 0;
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c) walls += layout.is_wall(r, c);
  CHECK(walls == 7);
  CHECK_FALSE(layout.is_wall(4, 6));
  CHECK(grid_state_index(layout, 4, 0) == static_cast<std::size_t>(-1));

  const auto build = build_grid(GridVariant::kGrid2, 1);
  CHECK(build.mdp.n_states() == 57);
  CHECK(build.features.n_states() == 57);

  // Moving down into the wall from row 3 is an against-wall move.
  const std::size_t above = grid_state_index(layout, 3, 2);
  CHECK(build.mdp.transition(above, kDown, above) == doctest::Approx(0.99));
  // Through the gap is a normal move.
  CHECK(build.mdp.transition(grid_state_index(layout, 3, 6), kDown, grid_state_index(layout, 4, 6)) == 1.0);

  const int d = bfs_distance(layout);
  REQUIRE(d > 0);
  CHECK(d <= build.mdp.episode_horizon());
  const QTable q = value_iteration(build.mdp);
  const std::size_t start = grid_state_index(layout, layout.start_row, layout.start_col);
  CHECK(max_row(q, start) == doctest::Approx(std::pow(0.9, d) / (1.0 - 0.9)).epsilon(1e-8));

  // Every free cell is reachable from the start.
  const auto occ = occupancy_sa(build.mdp, PolicyTable::uniform(57, 5), OccupancyMode::kDiscounted, 0, 0);
  for (std::size_t s = 0; s < 57; ++s) {
    double mass = 0.0;
    for (std::size_t a = 0; a < 5; ++a) mass += occ[s * 5 + a];
    CHECK(mass > 0.0);
  }
}

TEST_CASE("grid layout parsing") {
  CHECK_THROWS_AS(parse_grid_layout("S..\n..."), InvalidArgument);
  CHECK_THROWS_AS(parse_grid_layout("S.G\n.."), InvalidArgument);
  const auto g = parse_grid_layout("S.\n.G\n");
  CHECK(g.rows == 2);
  CHECK(g.goal_row == 1);
  CHECK(g.goal_col == 1);
}

TEST_CASE("multipath") {
  const MultipathShape shape;
  const auto build = build_multipath(shape, 3);
  const TabularMdp& mdp = build.mdp;
  CHECK(mdp.n_states() == 27);
  CHECK(mdp.n_pairs() == 135);
  CHECK(mdp.gamma() == 0.9);
  CHECK(mdp.episode_horizon() == 10);
  CHECK(build.features.dim() == 4);

  // Initial action i: path i w.p. 1 - p + p / k, any other path w.p. p / k.
  CHECK(mdp.transition(0, 2, shape.path_state(2, 0)) == doctest::Approx(0.99 + 0.002));
  CHECK(mdp.transition(0, 2, shape.path_state(4, 0)) == doctest::Approx(0.002));
  for (std::size_t path = 0; path < shape.k; ++path) {
    for (std::size_t pos = 0; pos + 1 < shape.l; ++pos) {
      const std::size_t s = shape.path_state(path, pos);
      for (std::size_t a = 0; a < shape.k; ++a) {
        const std::size_t expect = a == path ? shape.path_state(path, pos + 1) : shape.zero_state();
        CHECK(mdp.transition(s, a, expect) == 1.0);
        CHECK(mdp.reward(s, a) == 0.0);
      }
    }
    const std::size_t last = shape.path_state(path, shape.l - 1);
    CHECK(mdp.transition(last, 0, last) == 1.0);
    CHECK(mdp.reward(last, 0) == 1.0);
  }
  CHECK(mdp.reward(shape.zero_state(), 1) == 0.0);

  // Whatever path is entered can be completed, reaching the end at t = 5.
  const double best = finite_horizon_optimum(mdp);
  CHECK(best == doctest::Approx(5.0).epsilon(1e-12));

  // Rolling out the discounted-optimal greedy policy gives the same return.
  const QTable q = value_iteration(mdp);
  TabularEnv env("multipath", build_multipath(shape, 3));
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const double ret = rollout_return(env, rng, [&](const StateVec& s) {
      return argmax_action(q.row(static_cast<std::size_t>(s[0])));
    });
    CHECK(ret == 5.0);
  }
  CHECK_THROWS_AS(build_multipath({1, 5, 0.01}, 0), InvalidArgument);
}

TEST_CASE("pendulum") {
  const auto env = make_env("pendulum");
  CHECK(env->n_actions() == 5);
  CHECK(env->feature_dim() == 3);
  CHECK(env->n_cells() == 2500);
  CHECK(env->horizon() == 200);
  CHECK(env->gamma() == 0.99);
  // Hanging still at the bottom with zero torque stays put.
  ControlDynamics dyn(ControlKind::kPendulum);
  const auto r = dyn.step({std::numbers::pi, 0.0, 0, 0}, 2);
  CHECK(std::abs(std::abs(r.next[0]) - std::numbers::pi) < 1e-12);
  CHECK(std::abs(r.next[1]) < 1e-12);
  CHECK(r.reward == doctest::Approx(-std::numbers::pi * std::numbers::pi));
  // Upright at rest with zero torque costs nothing.
  CHECK(dyn.step({0.0, 0.0, 0, 0}, 2).reward == 0.0);
  double obs[3];
  dyn.observe({0.0, 1.5, 0, 0}, obs);
  CHECK(obs[0] == 1.0);
  CHECK(obs[1] == 0.0);
  CHECK(obs[2] == 1.5);
}

TEST_CASE("mountaincar") {
  ControlDynamics dyn(ControlKind::kMountainCar);
  CHECK(dyn.n_actions() == 3);
  CHECK(dyn.discretizer().n_cells() == 2500);
  // Valley bottom at position -pi/6; no push never reaches the goal.
  StateVec s{-std::numbers::pi / 6.0, 0.0, 0, 0};
  double lo = s[0], hi = s[0];
  for (int t = 0; t < 1000; ++t) {
    const auto r = dyn.step(s, 1);
    CHECK_FALSE(r.terminal);
    CHECK(r.reward == -1.0);
    s = r.next;
    lo = std::min(lo, s[0]);
    hi = std::max(hi, s[0]);
  }
  CHECK(hi < 0.5);
  CHECK(hi - lo < 1e-6);
  // Starting off-centre it oscillates but stays below the goal.
  s = {-0.4, 0.0, 0, 0};
  for (int t = 0; t < 1000; ++t) {
    s = dyn.step(s, 1).next;
    CHECK(s[0] < 0.5);
    CHECK(s[0] > -1.2);
  }
  CHECK(dyn.is_terminal({0.5, 0.0, 0, 0}));
}

TEST_CASE("cartpole") {
  ControlDynamics dyn(ControlKind::kCartPole);
  CHECK(dyn.n_actions() == 2);
  CHECK(dyn.horizon() == 500);
  CHECK(dyn.discretizer().n_cells() == 160000);
  StateVec s{}, ref{};
  const double threshold = 12.0 * 2.0 * std::numbers::pi / 360.0;
  int steps = 0;
  for (int t = 0; t < 100; ++t) {
    const auto r = dyn.step(s, t % 2);
    ref = cartpole_reference(ref, t % 2);
    for (int d = 0; d < 4; ++d) CHECK(r.next[d] == doctest::Approx(ref[d]).epsilon(1e-12));
    s = r.next;
    if (r.terminal) break;
    CHECK(std::abs(s[2]) < threshold);
    CHECK(r.reward == 1.0);
    ++steps;
  }
  CHECK(steps >= 20);
  CHECK(dyn.is_terminal({2.5, 0, 0, 0}));
  CHECK(dyn.is_terminal({0, 0, 0.25, 0}));
}

TEST_CASE("discretizer") {
  const Discretizer d({50, 50}, {-1.0, -2.0}, {1.0, 2.0});
  CHECK(d.n_cells() == 2500);
  const double corner[] = {-1.0, -2.0};
  CHECK(d.cell_of(corner) == 0);
  const double top[] = {1.0, 2.0};
  CHECK(d.cell_of(top) == 2499);
  const double outside[] = {-5.0, 7.0};
  CHECK(d.cell_of(outside) == 49);  // clamped; last dimension varies fastest
  const double nan[] = {std::nan(""), 0.0};
  CHECK_THROWS_AS(d.cell_of(nan), DefectError);
  CHECK_THROWS_AS(Discretizer({0}, {0.0}, {1.0}), InvalidArgument);

  Rng rng(5);
  double x[2];
  for (std::size_t cell : {0ul, 17ul, 1234ul, 2499ul}) {
    for (int i = 0; i < 20; ++i) {
      d.sample_in_cell(cell, rng, x);
      CHECK(d.cell_of(x) == cell);
    }
    d.cell_center(cell, x);
    CHECK(d.cell_of(x) == cell);
  }
}

TEST_CASE("environment views") {
  for (const auto& id : known_env_ids()) {
    const auto env = make_env(id, 4);
    CHECK(env->id() == id);
    Rng rng(1);
    const StateVec s = env->sample_initial(rng);
    CHECK(env->cell_of(s) < env->n_cells());
    std::vector<double> phi(env->feature_dim());
    env->features(s, phi);
    const auto step = env->step(s, 0, rng);
    CHECK(std::isfinite(step.reward));
    CHECK((env->tabular_mdp() != nullptr) == env->is_tabular());
  }
  CHECK_THROWS_AS(make_env("atari"), InvalidArgument);

  // Discretized reference MDP is a valid tabular model with one absorbing state.
  ControlEnv mc(ControlKind::kMountainCar);
  const TabularMdp dm = discretized_mdp(mc, 1, 9);
  CHECK(dm.n_states() == 2501);
  CHECK(dm.is_terminal(2500));
  double p0 = 0.0;
  for (double v : dm.initial_dist()) p0 += v;
  CHECK(p0 == doctest::Approx(1.0));
}
