#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace rldd {

/// Inputs are (input_dim x batch), one sample per column; outputs are
/// (n_actions x batch).
using Matrix = Eigen::MatrixXd;

/// Activations saved by forward() for a following backward().
struct Tape {
  std::vector<Matrix> values;
};

/// Differentiable Q-function with a flat parameter vector.
class QModel {
 public:
  virtual ~QModel() = default;

  virtual std::size_t input_dim() const = 0;
  virtual std::size_t n_actions() const = 0;
  std::size_t n_params() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  /// q = Q(x). Throws DefectError on an input dimension mismatch. When tape
  /// is non-null it receives what backward() needs.
  virtual void forward(const Matrix& x, Matrix& q, Tape* tape = nullptr) const = 0;
  /// Adds dL/dparams to grad given dq = dL/dQ at the taped forward pass.
  virtual void backward(const Tape& tape, const Matrix& dq, std::vector<double>& grad) const = 0;

  virtual std::unique_ptr<QModel> clone() const = 0;
  /// Shape header for checkpoints.
  virtual nlohmann::json describe() const = 0;

 protected:
  std::vector<double> params_;
};

enum class Activation { kRelu, kTanh };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation act);

/// Dense network: hidden layers use `activation`, the output is linear.
/// Layer l stores W (col-major, out x in) then b.
class Mlp final : public QModel {
 public:
  /// widths = {input, hidden..., n_actions}. Weights and biases start
  /// uniform in +-sqrt(1 / fan_in).
  Mlp(std::vector<std::size_t> widths, Activation activation, std::uint64_t seed);

  std::size_t input_dim() const override { return widths_.front(); }
  std::size_t n_actions() const override { return widths_.back(); }
  const std::vector<std::size_t>& widths() const { return widths_; }
  Activation activation() const { return activation_; }
  std::size_t n_layers() const { return widths_.size() - 1; }
  /// Offsets of W and b of layer l in params().
  std::size_t weight_offset(std::size_t l) const { return offsets_[l]; }
  std::size_t bias_offset(std::size_t l) const { return offsets_[l] + widths_[l + 1] * widths_[l]; }

  void forward(const Matrix& x, Matrix& q, Tape* tape = nullptr) const override;
  void backward(const Tape& tape, const Matrix& dq, std::vector<double>& grad) const override;
  std::unique_ptr<QModel> clone() const override { return std::make_unique<Mlp>(*this); }
  nlohmann::json describe() const override;

  static std::size_t param_count(const std::vector<std::size_t>& widths);

 private:
  std::vector<std::size_t> widths_;
  Activation activation_;
  std::vector<std::size_t> offsets_;
};

/// phi(x, a) written into out (size feature_dim).
using StateActionFeatureFn = std::function<void(std::span<const double> x, std::size_t a, std::span<double> out)>;

/// Q(s, a) = <w, phi(s, a)>. `kind` names the feature map for checkpoints.
class LinearQ final : public QModel {
 public:
  LinearQ(std::size_t input_dim, std::size_t n_actions, std::size_t feature_dim, StateActionFeatureFn phi,
          std::string kind);

  /// phi(x, a) = e_a (x) x, i.e. one weight block per action.
  static LinearQ action_blocked(std::size_t input_dim, std::size_t n_actions);
  /// Four-state features on one-hot state input (s1..s4); terminal states
  /// map to zero. Weights are (w1, w2, w3).
  static LinearQ four_state(double alpha);

  std::size_t input_dim() const override { return input_dim_; }
  std::size_t n_actions() const override { return n_actions_; }
  std::size_t feature_dim() const { return feature_dim_; }
  void phi(std::span<const double> x, std::size_t a, std::span<double> out) const { phi_(x, a, out); }

  void forward(const Matrix& x, Matrix& q, Tape* tape = nullptr) const override;
  void backward(const Tape& tape, const Matrix& dq, std::vector<double>& grad) const override;
  std::unique_ptr<QModel> clone() const override { return std::make_unique<LinearQ>(*this); }
  nlohmann::json describe() const override;

 private:
  std::size_t input_dim_, n_actions_, feature_dim_;
  StateActionFeatureFn phi_;
  std::string kind_;
  double alpha_ = 0.0;  // four_state only
};

// ─── Optimizers ─────────────────────────────────────────────────────────────

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global-norm clip; <= 0 disables.
  double clip_norm = 0.0;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam step in place.
void adam_step(AdamState& state, std::vector<double>& params, const std::vector<double>& grads,
               const AdamConfig& config = {});

/// Plain gradient descent step, params -= lr * grads.
void sgd_step(std::vector<double>& params, const std::vector<double>& grads, double lr);

// ─── Loss helpers ───────────────────────────────────────────────────────────

/// Mean squared error over one masked output per sample:
/// L = (1/B) sum_b (Q(a_b, b) - y_b)^2. Writes dL/dQ into dq.
double masked_mse(const Matrix& q, std::span<const std::size_t> actions, std::span<const double> targets,
                  Matrix& dq);

// ─── Checkpoints ────────────────────────────────────────────────────────────

/// <stem>.json holds describe() plus n_params; <stem>.bin the raw
/// little-endian float64 parameters.
void save_checkpoint(const QModel& model, const std::string& stem);
std::unique_ptr<QModel> load_checkpoint(const std::string& stem);

}  // namespace rldd
