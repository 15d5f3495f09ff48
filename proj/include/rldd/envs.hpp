#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rldd/mdp.hpp"
#include "rldd/rng.hpp"

namespace rldd {

// ─── Feature tables and tabular builders ───────────────────────────────────

/// Per-state feature vectors, entries uniform in [-1, 1], regenerable from seed.
class FeatureMapTable {
 public:
  FeatureMapTable() = default;
  FeatureMapTable(std::size_t n_states, std::size_t dim, std::uint64_t seed);
  /// One-hot features (dim == n_states); seed is recorded as 0.
  static FeatureMapTable one_hot(std::size_t n_states);

  std::size_t n_states() const { return n_states_; }
  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  std::span<const double> row(std::size_t s) const { return {values_.data() + s * dim_, dim_}; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::size_t n_states_ = 0;
  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<double> values_;
};

/// Parsed text map: 'S' start, 'G' goal, '#' wall, '.' free. Row 0 is the top.
struct GridLayout {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::string> cells;
  std::size_t start_row = 0, start_col = 0;
  std::size_t goal_row = 0, goal_col = 0;

  bool is_wall(std::size_t r, std::size_t c) const { return cells[r][c] == '#'; }
};

GridLayout parse_grid_layout(const std::string& text);
GridLayout load_grid_layout(const std::string& path);

/// Directory holding grids/*.txt. RLDD_DATA_DIR overrides the build-time default.
std::string data_dir();

enum class GridVariant { kGrid1, kGrid2 };

struct TabularBuild {
  TabularMdp mdp;
  FeatureMapTable features;
};

/// Grid actions, in index order.
enum GridAction : std::size_t { kUp = 0, kDown = 1, kRight = 2, kLeft = 3, kStay = 4 };

inline constexpr double kGridWallSlip = 0.01;

/// Free cells become states in row-major order; walls are not states.
/// Against-wall moves stay put w.p. 0.99 and otherwise move to a uniformly
/// chosen free neighbour. Reward 1 for any action taken at the goal.
TabularBuild build_grid_from_layout(const GridLayout& layout, std::uint64_t seed);
TabularBuild build_grid(GridVariant variant, std::uint64_t seed);

/// State of cell (r, c) in a layout, or npos for walls.
std::size_t grid_state_index(const GridLayout& layout, std::size_t r, std::size_t c);

struct MultipathShape {
  std::size_t k = 5;
  std::size_t l = 5;
  double p = 0.01;

  std::size_t initial_state() const { return 0; }
  std::size_t path_state(std::size_t path, std::size_t pos) const { return 1 + path * l + pos; }
  std::size_t zero_state() const { return 1 + k * l; }
  std::size_t n_states() const { return k * l + 2; }
};

/// Final path states absorb with reward 1 per step; the extra zero state
/// absorbs with reward 0. No terminal states: episodes run the full 10 steps.
TabularBuild build_multipath(const MultipathShape& shape, std::uint64_t seed);

// ─── Continuous control ─────────────────────────────────────────────────────

using StateVec = std::array<double, 4>;

struct StepResult {
  StateVec next;
  double reward;
  bool terminal;
};

enum class ControlKind { kPendulum, kMountainCar, kCartPole };

/// Histogram binning over a box; the last dimension varies fastest.
class Discretizer {
 public:
  Discretizer() = default;
  Discretizer(std::vector<std::size_t> bins, std::vector<double> lo, std::vector<double> hi);

  std::size_t dims() const { return bins_.size(); }
  std::size_t n_cells() const { return n_cells_; }
  const std::vector<std::size_t>& bins() const { return bins_; }
  /// Clamps each coordinate to the box first. NaN is a defect.
  std::size_t cell_of(std::span<const double> x) const;
  /// Uniform point inside a cell.
  void sample_in_cell(std::size_t cell, Rng& rng, std::span<double> out) const;
  void cell_center(std::size_t cell, std::span<double> out) const;

 private:
  std::vector<std::size_t> bins_;
  std::vector<double> lo_, hi_;
  std::size_t n_cells_ = 0;
};

/// Gym-style dynamics with canonical constants. step() is a pure function of
/// (state, action). Internal states: pendulum (theta, theta_dot), mountaincar
/// (position, velocity), cartpole (x, x_dot, theta, theta_dot).
class ControlDynamics {
 public:
  explicit ControlDynamics(ControlKind kind);

  ControlKind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t obs_dim() const { return kind_ == ControlKind::kPendulum ? 3 : state_dim_; }
  std::size_t n_actions() const;
  int horizon() const;
  double gamma() const { return 0.99; }
  const Discretizer& discretizer() const { return discretizer_; }

  StateVec sample_initial(Rng& rng) const;
  StepResult step(const StateVec& s, std::size_t a) const;
  bool is_terminal(const StateVec& s) const;
  void observe(const StateVec& s, std::span<double> out) const;

 private:
  ControlKind kind_;
  std::string name_;
  std::size_t state_dim_;
  Discretizer discretizer_;
};

/// Stateful wrapper: reset() draws from the initial distribution using the
/// owned RNG, step() advances.
class ContinuousEnv {
 public:
  ContinuousEnv(ControlKind kind, std::uint64_t seed);
  const ControlDynamics& dynamics() const { return dyn_; }
  const StateVec& state() const { return state_; }
  const StateVec& reset();
  StepResult step(std::size_t a);

 private:
  ControlDynamics dyn_;
  Rng rng_;
  StateVec state_{};
};

ContinuousEnv classic_control(ControlKind kind, std::uint64_t seed);

// ─── Uniform environment interface ──────────────────────────────────────────

/// Stateless view used by dataset generation and trainers. Tabular states are
/// stored as {id, 0, 0, 0}. "Cells" are tabular states or discretizer cells.
class Environment {
 public:
  virtual ~Environment() = default;

  const std::string& id() const { return id_; }
  virtual bool is_tabular() const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t n_actions() const = 0;
  virtual int horizon() const = 0;
  virtual double gamma() const = 0;
  virtual std::size_t n_cells() const = 0;
  virtual std::size_t cell_of(const StateVec& s) const = 0;
  virtual std::size_t feature_dim() const = 0;
  virtual void features(const StateVec& s, std::span<double> out) const = 0;
  virtual StateVec sample_initial(Rng& rng) const = 0;
  virtual StepResult step(const StateVec& s, std::size_t a, Rng& rng) const = 0;
  /// Generative access: a state inside the cell (tabular: the state itself).
  virtual StateVec sample_in_cell(std::size_t cell, Rng& rng) const = 0;
  virtual StateVec cell_representative(std::size_t cell) const = 0;
  /// Whether states can be set directly (needed for coverage patches).
  virtual bool has_generative_access() const { return true; }
  /// Null for continuous environments.
  virtual const TabularMdp* tabular_mdp() const { return nullptr; }

 protected:
  explicit Environment(std::string id) : id_(std::move(id)) {}

 private:
  std::string id_;
};

class TabularEnv final : public Environment {
 public:
  TabularEnv(std::string id, TabularBuild build);

  bool is_tabular() const override { return true; }
  std::size_t state_dim() const override { return 1; }
  std::size_t n_actions() const override { return mdp_.n_actions(); }
  int horizon() const override { return mdp_.episode_horizon(); }
  double gamma() const override { return mdp_.gamma(); }
  std::size_t n_cells() const override { return mdp_.n_states(); }
  std::size_t cell_of(const StateVec& s) const override;
  std::size_t feature_dim() const override { return features_.dim(); }
  void features(const StateVec& s, std::span<double> out) const override;
  StateVec sample_initial(Rng& rng) const override;
  StepResult step(const StateVec& s, std::size_t a, Rng& rng) const override;
  StateVec sample_in_cell(std::size_t cell, Rng& rng) const override;
  StateVec cell_representative(std::size_t cell) const override;
  const TabularMdp* tabular_mdp() const override { return &mdp_; }
  const FeatureMapTable& feature_table() const { return features_; }

 private:
  TabularMdp mdp_;
  FeatureMapTable features_;
};

class ControlEnv final : public Environment {
 public:
  explicit ControlEnv(ControlKind kind);

  bool is_tabular() const override { return false; }
  std::size_t state_dim() const override { return dyn_.state_dim(); }
  std::size_t n_actions() const override { return dyn_.n_actions(); }
  int horizon() const override { return dyn_.horizon(); }
  double gamma() const override { return dyn_.gamma(); }
  std::size_t n_cells() const override { return dyn_.discretizer().n_cells(); }
  std::size_t cell_of(const StateVec& s) const override;
  std::size_t feature_dim() const override { return dyn_.obs_dim(); }
  void features(const StateVec& s, std::span<double> out) const override;
  StateVec sample_initial(Rng& rng) const override { return dyn_.sample_initial(rng); }
  StepResult step(const StateVec& s, std::size_t a, Rng&) const override { return dyn_.step(s, a); }
  StateVec sample_in_cell(std::size_t cell, Rng& rng) const override;
  StateVec cell_representative(std::size_t cell) const override;
  const ControlDynamics& dynamics() const { return dyn_; }

 private:
  ControlDynamics dyn_;
};

/// Known ids: fourstate, grid1, grid2, multipath, pendulum, mountaincar, cartpole.
/// `seed` drives the random feature tables of grid and multipath.
std::unique_ptr<Environment> make_env(const std::string& id, std::uint64_t feature_seed = 0);
std::vector<std::string> known_env_ids();

/// Discretized MDP over the cells of a continuous environment, plus one
/// absorbing terminal state at index n_cells. Each (cell, a) row averages
/// `samples_per_cell` uniform draws inside the cell.
TabularMdp discretized_mdp(const ControlEnv& env, std::size_t samples_per_cell, std::uint64_t seed);

/// Undiscounted return of one episode from sample_initial, acting through
/// `policy(state) -> action`.
template <typename Policy>
double rollout_return(const Environment& env, Rng& rng, Policy&& policy) {
  StateVec s = env.sample_initial(rng);
  double ret = 0.0;
  for (int t = 0; t < env.horizon(); ++t) {
    const StepResult step = env.step(s, policy(s), rng);
    ret += step.reward;
    if (step.terminal) break;
    s = step.next;
  }
  return ret;
}

}  // namespace rldd
