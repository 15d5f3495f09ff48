#include "rldd/envs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "rldd/errors.hpp"
#include "rldd/four_state.hpp"

#ifndef RLDD_DEFAULT_DATA_DIR
#define RLDD_DEFAULT_DATA_DIR "data"
#endif

namespace rldd {

// ─── Feature tables ─────────────────────────────────────────────────────────

FeatureMapTable::FeatureMapTable(std::size_t n_states, std::size_t dim, std::uint64_t seed)
    : n_states_(n_states), dim_(dim), seed_(seed), values_(n_states * dim) {
  if (n_states == 0 || dim == 0) throw InvalidArgument("FeatureMapTable: empty shape");
  Rng rng(seed);
  for (double& v : values_) v = rng.uniform(-1.0, 1.0);
}

FeatureMapTable FeatureMapTable::one_hot(std::size_t n_states) {
  FeatureMapTable t;
  t.n_states_ = n_states;
  t.dim_ = n_states;
  t.values_.assign(n_states * n_states, 0.0);
  for (std::size_t s = 0; s < n_states; ++s) t.values_[s * n_states + s] = 1.0;
  return t;
}

// ─── Grid ───────────────────────────────────────────────────────────────────

GridLayout parse_grid_layout(const std::string& text) {
  GridLayout layout;
  std::istringstream in(text);
  std::string line;
  bool has_start = false, has_goal = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (layout.cols == 0) layout.cols = line.size();
    if (line.size() != layout.cols) throw InvalidArgument("grid layout: ragged rows");
    for (std::size_t c = 0; c < line.size(); ++c) {
      switch (line[c]) {
        case 'S':
          if (has_start) throw InvalidArgument("grid layout: more than one S");
          has_start = true;
          layout.start_row = layout.rows;
          layout.start_col = c;
          break;
        case 'G':
          if (has_goal) throw InvalidArgument("grid layout: more than one G");
          has_goal = true;
          layout.goal_row = layout.rows;
          layout.goal_col = c;
          break;
        case '#':
        case '.':
          break;
        default:
          throw InvalidArgument(std::string("grid layout: unknown symbol '") + line[c] + "'");
      }
    }
    layout.cells.push_back(line);
    ++layout.rows;
  }
  if (!has_start || !has_goal) throw InvalidArgument("grid layout: needs exactly one S and one G");
  return layout;
}

GridLayout load_grid_layout(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open grid layout " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_grid_layout(buf.str());
}

std::string data_dir() {
  if (const char* env = std::getenv("RLDD_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return RLDD_DEFAULT_DATA_DIR;
}

std::size_t grid_state_index(const GridLayout& layout, std::size_t r, std::size_t c) {
  if (layout.is_wall(r, c)) return static_cast<std::size_t>(-1);
  std::size_t idx = 0;
  for (std::size_t i = 0; i < r * layout.cols + c; ++i) {
    if (!layout.is_wall(i / layout.cols, i % layout.cols)) ++idx;
  }
  return idx;
}

TabularBuild build_grid_from_layout(const GridLayout& layout, std::uint64_t seed) {
  const std::size_t n_cells = layout.rows * layout.cols;
  std::vector<std::size_t> index(n_cells, static_cast<std::size_t>(-1));
  std::size_t n_states = 0;
  for (std::size_t i = 0; i < n_cells; ++i) {
    if (!layout.is_wall(i / layout.cols, i % layout.cols)) index[i] = n_states++;
  }
  auto free_cell = [&](long r, long c) {
    return r >= 0 && c >= 0 && r < static_cast<long>(layout.rows) && c < static_cast<long>(layout.cols) &&
           !layout.is_wall(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  };
  static constexpr long kDr[4] = {-1, 1, 0, 0};
  static constexpr long kDc[4] = {0, 0, 1, -1};
  constexpr std::size_t n_a = 5;

  std::vector<std::vector<Successor>> rows(n_states * n_a);
  std::vector<double> reward(n_states * n_a, 0.0);
  const std::size_t goal = index[layout.goal_row * layout.cols + layout.goal_col];
  for (std::size_t i = 0; i < n_cells; ++i) {
    if (index[i] == static_cast<std::size_t>(-1)) continue;
    const auto r = static_cast<long>(i / layout.cols), c = static_cast<long>(i % layout.cols);
    const std::size_t s = index[i];
    std::vector<std::size_t> neighbours;
    for (int d = 0; d < 4; ++d) {
      if (free_cell(r + kDr[d], c + kDc[d])) {
        neighbours.push_back(index[static_cast<std::size_t>((r + kDr[d]) * static_cast<long>(layout.cols) + c + kDc[d])]);
      }
    }
    for (std::size_t a = 0; a < n_a; ++a) {
      auto& row = rows[s * n_a + a];
      if (a == kStay) {
        row.push_back({s, 1.0});
      } else if (free_cell(r + kDr[a], c + kDc[a])) {
        row.push_back({index[static_cast<std::size_t>((r + kDr[a]) * static_cast<long>(layout.cols) + c + kDc[a])], 1.0});
      } else if (neighbours.empty()) {
        row.push_back({s, 1.0});
      } else {
        row.push_back({s, 1.0 - kGridWallSlip});
        for (std::size_t nb : neighbours) {
          row.push_back({nb, kGridWallSlip / static_cast<double>(neighbours.size())});
        }
      }
      if (s == goal) reward[s * n_a + a] = 1.0;
    }
  }
  std::vector<double> p0(n_states, 0.0);
  p0[index[layout.start_row * layout.cols + layout.start_col]] = 1.0;
  TabularMdp mdp(n_states, n_a, std::move(rows), std::move(reward), 0.9, std::move(p0),
                 std::vector<bool>(n_states, false), 50);
  return {std::move(mdp), FeatureMapTable(n_states, 8, seed)};
}

TabularBuild build_grid(GridVariant variant, std::uint64_t seed) {
  const char* file = variant == GridVariant::kGrid1 ? "grid1.txt" : "grid2.txt";
  return build_grid_from_layout(load_grid_layout(data_dir() + "/grids/" + file), seed);
}

// ─── Multi-path ─────────────────────────────────────────────────────────────

TabularBuild build_multipath(const MultipathShape& shape, std::uint64_t seed) {
  const std::size_t k = shape.k, l = shape.l;
  if (k < 2 || l < 1 || !(shape.p >= 0.0 && shape.p < 1.0)) {
    throw InvalidArgument("build_multipath: need k >= 2, l >= 1, p in [0, 1)");
  }
  const std::size_t n_s = shape.n_states();
  const std::size_t n_a = k;
  std::vector<std::vector<Successor>> rows(n_s * n_a);
  std::vector<double> reward(n_s * n_a, 0.0);

  for (std::size_t a = 0; a < n_a; ++a) {
    auto& row = rows[shape.initial_state() * n_a + a];
    for (std::size_t path = 0; path < k; ++path) {
      double prob = shape.p / static_cast<double>(k);
      if (path == a) prob += 1.0 - shape.p;
      if (prob > 0.0) row.push_back({shape.path_state(path, 0), prob});
    }
  }
  for (std::size_t path = 0; path < k; ++path) {
    for (std::size_t pos = 0; pos < l; ++pos) {
      const std::size_t s = shape.path_state(path, pos);
      for (std::size_t a = 0; a < n_a; ++a) {
        if (pos + 1 == l) {
          rows[s * n_a + a].push_back({s, 1.0});
          reward[s * n_a + a] = 1.0;
        } else if (a == path) {
          rows[s * n_a + a].push_back({shape.path_state(path, pos + 1), 1.0});
        } else {
          rows[s * n_a + a].push_back({shape.zero_state(), 1.0});
        }
      }
    }
  }
  for (std::size_t a = 0; a < n_a; ++a) rows[shape.zero_state() * n_a + a].push_back({shape.zero_state(), 1.0});

  std::vector<double> p0(n_s, 0.0);
  p0[shape.initial_state()] = 1.0;
  TabularMdp mdp(n_s, n_a, std::move(rows), std::move(reward), 0.9, std::move(p0),
                 std::vector<bool>(n_s, false), 10);
  return {std::move(mdp), FeatureMapTable(n_s, 4, seed)};
}

// ─── Discretizer ────────────────────────────────────────────────────────────

Discretizer::Discretizer(std::vector<std::size_t> bins, std::vector<double> lo, std::vector<double> hi)
    : bins_(std::move(bins)), lo_(std::move(lo)), hi_(std::move(hi)), n_cells_(1) {
  if (bins_.empty() || bins_.size() != lo_.size() || bins_.size() != hi_.size()) {
    throw InvalidArgument("Discretizer: shape mismatch");
  }
  for (std::size_t d = 0; d < bins_.size(); ++d) {
    if (bins_[d] == 0 || !(hi_[d] > lo_[d])) throw InvalidArgument("Discretizer: empty dimension");
    n_cells_ *= bins_[d];
  }
}

std::size_t Discretizer::cell_of(std::span<const double> x) const {
  std::size_t cell = 0;
  for (std::size_t d = 0; d < bins_.size(); ++d) {
    if (std::isnan(x[d])) throw DefectError("Discretizer: NaN coordinate");
    const double v = std::clamp(x[d], lo_[d], hi_[d]);
    auto b = static_cast<std::size_t>((v - lo_[d]) / (hi_[d] - lo_[d]) * static_cast<double>(bins_[d]));
    b = std::min(b, bins_[d] - 1);
    cell = cell * bins_[d] + b;
  }
  return cell;
}

void Discretizer::sample_in_cell(std::size_t cell, Rng& rng, std::span<double> out) const {
  if (cell >= n_cells_) throw InvalidArgument("Discretizer: cell out of range");
  for (std::size_t d = bins_.size(); d-- > 0;) {
    const std::size_t b = cell % bins_[d];
    cell /= bins_[d];
    const double width = (hi_[d] - lo_[d]) / static_cast<double>(bins_[d]);
    out[d] = lo_[d] + (static_cast<double>(b) + rng.uniform()) * width;
  }
}

void Discretizer::cell_center(std::size_t cell, std::span<double> out) const {
  if (cell >= n_cells_) throw InvalidArgument("Discretizer: cell out of range");
  for (std::size_t d = bins_.size(); d-- > 0;) {
    const std::size_t b = cell % bins_[d];
    cell /= bins_[d];
    const double width = (hi_[d] - lo_[d]) / static_cast<double>(bins_[d]);
    out[d] = lo_[d] + (static_cast<double>(b) + 0.5) * width;
  }
}

// ─── Classic control ────────────────────────────────────────────────────────

namespace {

constexpr double kPi = std::numbers::pi;

// pendulum
constexpr double kPendG = 10.0, kPendM = 1.0, kPendL = 1.0, kPendDt = 0.05, kPendMaxSpeed = 8.0;
// mountaincar
constexpr double kMcMinPos = -1.2, kMcMaxPos = 0.6, kMcMaxSpeed = 0.07, kMcGoal = 0.5;
constexpr double kMcForce = 0.001, kMcGravity = 0.0025;
// cartpole
constexpr double kCpGravity = 9.8, kCpMassCart = 1.0, kCpMassPole = 0.1, kCpHalfLength = 0.5;
constexpr double kCpForce = 10.0, kCpTau = 0.02, kCpXThreshold = 2.4;
constexpr double kCpThetaThreshold = 12.0 * 2.0 * kPi / 360.0;
constexpr double kCpMaxXDot = 3.0, kCpMaxThetaDot = 3.5;

double angle_normalize(double x) {
  const double y = std::fmod(x + kPi, 2.0 * kPi);
  return (y < 0.0 ? y + 2.0 * kPi : y) - kPi;
}

}  // namespace

ControlDynamics::ControlDynamics(ControlKind kind) : kind_(kind) {
  switch (kind) {
    case ControlKind::kPendulum:
      name_ = "pendulum";
      state_dim_ = 2;
      discretizer_ = Discretizer({50, 50}, {-kPi, -kPendMaxSpeed}, {kPi, kPendMaxSpeed});
      break;
    case ControlKind::kMountainCar:
      name_ = "mountaincar";
      state_dim_ = 2;
      discretizer_ = Discretizer({50, 50}, {kMcMinPos, -kMcMaxSpeed}, {kMcMaxPos, kMcMaxSpeed});
      break;
    case ControlKind::kCartPole:
      name_ = "cartpole";
      state_dim_ = 4;
      discretizer_ = Discretizer({20, 20, 20, 20},
                                 {-kCpXThreshold, -kCpMaxXDot, -kCpThetaThreshold, -kCpMaxThetaDot},
                                 {kCpXThreshold, kCpMaxXDot, kCpThetaThreshold, kCpMaxThetaDot});
      break;
  }
}

std::size_t ControlDynamics::n_actions() const {
  switch (kind_) {
    case ControlKind::kPendulum: return 5;
    case ControlKind::kMountainCar: return 3;
    case ControlKind::kCartPole: return 2;
  }
  return 0;
}

int ControlDynamics::horizon() const {
  switch (kind_) {
    case ControlKind::kPendulum: return 200;
    case ControlKind::kMountainCar: return 200;
    case ControlKind::kCartPole: return 500;
  }
  return 0;
}

StateVec ControlDynamics::sample_initial(Rng& rng) const {
  switch (kind_) {
    case ControlKind::kPendulum: {
      const double th = rng.uniform(-kPi, kPi);
      const double thdot = rng.uniform(-1.0, 1.0);
      return {th, thdot, 0.0, 0.0};
    }
    case ControlKind::kMountainCar:
      return {rng.uniform(-0.6, -0.4), 0.0, 0.0, 0.0};
    case ControlKind::kCartPole: {
      StateVec s{};
      for (double& v : s) v = rng.uniform(-0.05, 0.05);
      return s;
    }
  }
  return {};
}

bool ControlDynamics::is_terminal(const StateVec& s) const {
  switch (kind_) {
    case ControlKind::kPendulum: return false;
    case ControlKind::kMountainCar: return s[0] >= kMcGoal;
    case ControlKind::kCartPole:
      return s[0] < -kCpXThreshold || s[0] > kCpXThreshold || s[2] < -kCpThetaThreshold ||
             s[2] > kCpThetaThreshold;
  }
  return false;
}

StepResult ControlDynamics::step(const StateVec& s, std::size_t a) const {
  if (a >= n_actions()) throw InvalidArgument("ControlDynamics::step: action out of range");
  switch (kind_) {
    case ControlKind::kPendulum: {
      const double u = static_cast<double>(a) - 2.0;  // {-2, -1, 0, 1, 2}
      const double th = s[0], thdot = s[1];
      const double cost = angle_normalize(th) * angle_normalize(th) + 0.1 * thdot * thdot + 0.001 * u * u;
      double new_thdot = thdot + (3.0 * kPendG / (2.0 * kPendL) * std::sin(th) +
                                  3.0 / (kPendM * kPendL * kPendL) * u) * kPendDt;
      new_thdot = std::clamp(new_thdot, -kPendMaxSpeed, kPendMaxSpeed);
      const double new_th = angle_normalize(th + new_thdot * kPendDt);
      return {{new_th, new_thdot, 0.0, 0.0}, -cost, false};
    }
    case ControlKind::kMountainCar: {
      double pos = s[0], vel = s[1];
      vel += (static_cast<double>(a) - 1.0) * kMcForce - std::cos(3.0 * pos) * kMcGravity;
      vel = std::clamp(vel, -kMcMaxSpeed, kMcMaxSpeed);
      pos = std::clamp(pos + vel, kMcMinPos, kMcMaxPos);
      if (pos == kMcMinPos && vel < 0.0) vel = 0.0;
      const StateVec next{pos, vel, 0.0, 0.0};
      return {next, -1.0, is_terminal(next)};
    }
    case ControlKind::kCartPole: {
      const double x = s[0], x_dot = s[1], theta = s[2], theta_dot = s[3];
      const double force = a == 1 ? kCpForce : -kCpForce;
      const double total_mass = kCpMassCart + kCpMassPole;
      const double pole_mass_length = kCpMassPole * kCpHalfLength;
      const double cos_t = std::cos(theta), sin_t = std::sin(theta);
      const double temp = (force + pole_mass_length * theta_dot * theta_dot * sin_t) / total_mass;
      const double theta_acc = (kCpGravity * sin_t - cos_t * temp) /
                               (kCpHalfLength * (4.0 / 3.0 - kCpMassPole * cos_t * cos_t / total_mass));
      const double x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass;
      const StateVec next{x + kCpTau * x_dot, x_dot + kCpTau * x_acc, theta + kCpTau * theta_dot,
                          theta_dot + kCpTau * theta_acc};
      return {next, 1.0, is_terminal(next)};
    }
  }
  throw DefectError("ControlDynamics::step: unknown kind");
}

void ControlDynamics::observe(const StateVec& s, std::span<double> out) const {
  if (kind_ == ControlKind::kPendulum) {
    out[0] = std::cos(s[0]);
    out[1] = std::sin(s[0]);
    out[2] = s[1];
    return;
  }
  for (std::size_t d = 0; d < state_dim_; ++d) out[d] = s[d];
}

ContinuousEnv::ContinuousEnv(ControlKind kind, std::uint64_t seed) : dyn_(kind), rng_(seed) { reset(); }

const StateVec& ContinuousEnv::reset() {
  state_ = dyn_.sample_initial(rng_);
  return state_;
}

StepResult ContinuousEnv::step(std::size_t a) {
  StepResult r = dyn_.step(state_, a);
  state_ = r.next;
  return r;
}

ContinuousEnv classic_control(ControlKind kind, std::uint64_t seed) { return ContinuousEnv(kind, seed); }

// ─── Environment views ──────────────────────────────────────────────────────

namespace {

std::size_t tabular_id(const StateVec& s, std::size_t n) {
  const double v = s[0];
  if (!(v >= 0.0) || v >= static_cast<double>(n) || v != std::floor(v)) {
    throw InvalidArgument("tabular state id out of range");
  }
  return static_cast<std::size_t>(v);
}

StateVec tabular_state(std::size_t id) { return {static_cast<double>(id), 0.0, 0.0, 0.0}; }

}  // namespace

TabularEnv::TabularEnv(std::string id, TabularBuild build)
    : Environment(std::move(id)), mdp_(std::move(build.mdp)), features_(std::move(build.features)) {
  if (features_.n_states() != mdp_.n_states()) throw InvalidArgument("TabularEnv: feature table size");
}

std::size_t TabularEnv::cell_of(const StateVec& s) const { return tabular_id(s, mdp_.n_states()); }

void TabularEnv::features(const StateVec& s, std::span<double> out) const {
  const auto row = features_.row(cell_of(s));
  std::copy(row.begin(), row.end(), out.begin());
}

StateVec TabularEnv::sample_initial(Rng& rng) const {
  return tabular_state(rng.categorical(mdp_.initial_dist()));
}

StepResult TabularEnv::step(const StateVec& s, std::size_t a, Rng& rng) const {
  const std::size_t id = cell_of(s);
  if (a >= mdp_.n_actions()) throw InvalidArgument("TabularEnv::step: action out of range");
  const std::size_t s2 = sample_successor(mdp_, id, a, rng);
  return {tabular_state(s2), mdp_.reward(id, a), mdp_.is_terminal(s2)};
}

StateVec TabularEnv::sample_in_cell(std::size_t cell, Rng&) const { return cell_representative(cell); }

StateVec TabularEnv::cell_representative(std::size_t cell) const {
  if (cell >= mdp_.n_states()) throw InvalidArgument("TabularEnv: cell out of range");
  return tabular_state(cell);
}

ControlEnv::ControlEnv(ControlKind kind) : Environment(ControlDynamics(kind).name()), dyn_(kind) {}

std::size_t ControlEnv::cell_of(const StateVec& s) const {
  return dyn_.discretizer().cell_of(std::span<const double>(s.data(), dyn_.state_dim()));
}

void ControlEnv::features(const StateVec& s, std::span<double> out) const { dyn_.observe(s, out); }

StateVec ControlEnv::sample_in_cell(std::size_t cell, Rng& rng) const {
  StateVec s{};
  dyn_.discretizer().sample_in_cell(cell, rng, std::span<double>(s.data(), dyn_.state_dim()));
  return s;
}

StateVec ControlEnv::cell_representative(std::size_t cell) const {
  StateVec s{};
  dyn_.discretizer().cell_center(cell, std::span<double>(s.data(), dyn_.state_dim()));
  return s;
}

std::vector<std::string> known_env_ids() {
  return {"fourstate", "grid1", "grid2", "multipath", "pendulum", "mountaincar", "cartpole"};
}

std::unique_ptr<Environment> make_env(const std::string& id, std::uint64_t feature_seed) {
  if (id == "fourstate") {
    return std::make_unique<TabularEnv>(id, TabularBuild{four_state::build_four_state_mdp(),
                                                         FeatureMapTable::one_hot(4)});
  }
  if (id == "grid1") return std::make_unique<TabularEnv>(id, build_grid(GridVariant::kGrid1, feature_seed));
  if (id == "grid2") return std::make_unique<TabularEnv>(id, build_grid(GridVariant::kGrid2, feature_seed));
  if (id == "multipath") return std::make_unique<TabularEnv>(id, build_multipath({}, feature_seed));
  if (id == "pendulum") return std::make_unique<ControlEnv>(ControlKind::kPendulum);
  if (id == "mountaincar") return std::make_unique<ControlEnv>(ControlKind::kMountainCar);
  if (id == "cartpole") return std::make_unique<ControlEnv>(ControlKind::kCartPole);
  throw InvalidArgument("unknown environment '" + id + "'");
}

// ─── Discretized reference MDP ──────────────────────────────────────────────

TabularMdp discretized_mdp(const ControlEnv& env, std::size_t samples_per_cell, std::uint64_t seed) {
  if (samples_per_cell == 0) throw InvalidArgument("discretized_mdp: samples_per_cell must be >= 1");
  const std::size_t n_cells = env.n_cells();
  const std::size_t n_s = n_cells + 1;
  const std::size_t absorbing = n_cells;
  const std::size_t n_a = env.n_actions();
  std::vector<std::vector<Successor>> rows(n_s * n_a);
  std::vector<double> reward(n_s * n_a, 0.0);
  Rng rng(seed);
  const double w = 1.0 / static_cast<double>(samples_per_cell);
  std::vector<std::size_t> next(samples_per_cell);
  std::vector<StateVec> points(samples_per_cell);

  for (std::size_t c = 0; c < n_cells; ++c) {
    for (auto& p : points) p = env.sample_in_cell(c, rng);
    for (std::size_t a = 0; a < n_a; ++a) {
      double r = 0.0;
      for (std::size_t i = 0; i < samples_per_cell; ++i) {
        const StepResult step = env.step(points[i], a, rng);
        r += step.reward;
        next[i] = step.terminal ? absorbing : env.cell_of(step.next);
      }
      std::sort(next.begin(), next.end());
      auto& row = rows[c * n_a + a];
      for (std::size_t i = 0; i < samples_per_cell;) {
        std::size_t j = i;
        while (j < samples_per_cell && next[j] == next[i]) ++j;
        row.push_back({next[i], w * static_cast<double>(j - i)});
        i = j;
      }
      reward[c * n_a + a] = r * w;
    }
  }
  for (std::size_t a = 0; a < n_a; ++a) rows[absorbing * n_a + a].push_back({absorbing, 1.0});

  std::vector<double> p0(n_s, 0.0);
  constexpr std::size_t kInitialDraws = 10000;
  for (std::size_t i = 0; i < kInitialDraws; ++i) p0[env.cell_of(env.sample_initial(rng))] += 1.0;
  for (double& v : p0) v /= static_cast<double>(kInitialDraws);
  std::vector<bool> terminal(n_s, false);
  terminal[absorbing] = true;
  return TabularMdp(n_s, n_a, std::move(rows), std::move(reward), env.gamma(), std::move(p0),
                    std::move(terminal), env.horizon());
}

}  // namespace rldd
