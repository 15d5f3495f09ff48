#include "rldd/approx.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "rldd/errors.hpp"
#include "rldd/four_state.hpp"
#include "rldd/rng.hpp"

namespace rldd {

namespace {

using MapM = Eigen::Map<Matrix>;
using CMapM = Eigen::Map<const Matrix>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using CMapV = Eigen::Map<const Eigen::VectorXd>;

void check_input(const Matrix& x, std::size_t dim, const char* who) {
  if (static_cast<std::size_t>(x.rows()) != dim) {
    throw DefectError(std::string(who) + ": input has " + std::to_string(x.rows()) + " rows, expected " +
                      std::to_string(dim));
  }
}

}  // namespace

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw InvalidArgument("unknown activation '" + name + "'");
}

std::string to_string(Activation act) { return act == Activation::kRelu ? "relu" : "tanh"; }

// ─── Mlp ────────────────────────────────────────────────────────────────────

std::size_t Mlp::param_count(const std::vector<std::size_t>& widths) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l + 1] * widths[l] + widths[l + 1];
  return n;
}

Mlp::Mlp(std::vector<std::size_t> widths, Activation activation, std::uint64_t seed)
    : widths_(std::move(widths)), activation_(activation) {
  if (widths_.size() < 2) throw InvalidArgument("Mlp: need at least input and output widths");
  for (std::size_t w : widths_) {
    if (w == 0) throw InvalidArgument("Mlp: zero-width layer");
  }
  params_.resize(param_count(widths_));
  Rng rng(seed);
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    offsets_.push_back(off);
    const double bound = std::sqrt(1.0 / static_cast<double>(widths_[l]));
    const std::size_t n = widths_[l + 1] * widths_[l] + widths_[l + 1];
    for (std::size_t i = 0; i < n; ++i) params_[off + i] = rng.uniform(-bound, bound);
    off += n;
  }
}

void Mlp::forward(const Matrix& x, Matrix& q, Tape* tape) const {
  check_input(x, widths_.front(), "Mlp::forward");
  if (tape != nullptr) tape->values.assign(1, x);
  Matrix a = x;
  for (std::size_t l = 0; l < n_layers(); ++l) {
    const auto out = static_cast<Eigen::Index>(widths_[l + 1]), in = static_cast<Eigen::Index>(widths_[l]);
    CMapM w(params_.data() + weight_offset(l), out, in);
    CMapV b(params_.data() + bias_offset(l), out);
    Matrix z = w * a;
    z.colwise() += b;
    if (l + 1 == n_layers()) {
      q = std::move(z);
      return;
    }
    if (activation_ == Activation::kRelu) {
      a = z.cwiseMax(0.0);
    } else {
      a = z.array().tanh().matrix();
    }
    if (tape != nullptr) tape->values.push_back(a);
  }
}

void Mlp::backward(const Tape& tape, const Matrix& dq, std::vector<double>& grad) const {
  if (tape.values.size() != n_layers()) throw DefectError("Mlp::backward: tape does not match the network");
  if (grad.size() != params_.size()) throw DefectError("Mlp::backward: gradient size mismatch");
  Matrix delta = dq;
  for (std::size_t l = n_layers(); l-- > 0;) {
    const auto out = static_cast<Eigen::Index>(widths_[l + 1]), in = static_cast<Eigen::Index>(widths_[l]);
    const Matrix& a = tape.values[l];
    MapM gw(grad.data() + weight_offset(l), out, in);
    MapV gb(grad.data() + bias_offset(l), out);
    gw.noalias() += delta * a.transpose();
    gb += delta.rowwise().sum();
    if (l == 0) break;
    CMapM w(params_.data() + weight_offset(l), out, in);
    Matrix back = w.transpose() * delta;
    if (activation_ == Activation::kRelu) {
      delta = back.array() * (a.array() > 0.0).cast<double>();
    } else {
      delta = back.array() * (1.0 - a.array().square());
    }
  }
}

nlohmann::json Mlp::describe() const {
  return {{"kind", "mlp"}, {"widths", widths_}, {"activation", to_string(activation_)}};
}

// ─── LinearQ ────────────────────────────────────────────────────────────────

LinearQ::LinearQ(std::size_t input_dim, std::size_t n_actions, std::size_t feature_dim, StateActionFeatureFn phi,
                 std::string kind)
    : input_dim_(input_dim), n_actions_(n_actions), feature_dim_(feature_dim), phi_(std::move(phi)),
      kind_(std::move(kind)) {
  if (input_dim == 0 || n_actions == 0 || feature_dim == 0) throw InvalidArgument("LinearQ: empty shape");
  params_.assign(feature_dim, 0.0);
}

LinearQ LinearQ::action_blocked(std::size_t input_dim, std::size_t n_actions) {
  auto phi = [input_dim](std::span<const double> x, std::size_t a, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>(a * input_dim));
  };
  return LinearQ(input_dim, n_actions, input_dim * n_actions, phi, "linear_action_blocked");
}

LinearQ LinearQ::four_state(double alpha) {
  const four_state::FourStateFeatures features(alpha);
  auto phi = [features](std::span<const double> x, std::size_t a, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    std::size_t s = 0;
    while (s < 4 && x[s] != 1.0) ++s;
    if (s >= 2) return;  // s3, s4 are terminal: zero features, Q = 0
    const auto f = features.phi(static_cast<four_state::Pair>(s * 2 + a));
    std::copy(f.begin(), f.end(), out.begin());
  };
  LinearQ q(4, 2, 3, phi, "linear_four_state");
  q.alpha_ = alpha;
  return q;
}

void LinearQ::forward(const Matrix& x, Matrix& q, Tape* tape) const {
  check_input(x, input_dim_, "LinearQ::forward");
  if (tape != nullptr) tape->values.assign(1, x);
  q.resize(static_cast<Eigen::Index>(n_actions_), x.cols());
  std::vector<double> f(feature_dim_);
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    std::span<const double> col(x.data() + b * x.rows(), input_dim_);
    for (std::size_t a = 0; a < n_actions_; ++a) {
      phi_(col, a, f);
      double v = 0.0;
      for (std::size_t k = 0; k < feature_dim_; ++k) v += params_[k] * f[k];
      q(static_cast<Eigen::Index>(a), b) = v;
    }
  }
}

void LinearQ::backward(const Tape& tape, const Matrix& dq, std::vector<double>& grad) const {
  if (tape.values.size() != 1) throw DefectError("LinearQ::backward: bad tape");
  if (grad.size() != params_.size()) throw DefectError("LinearQ::backward: gradient size mismatch");
  const Matrix& x = tape.values.front();
  std::vector<double> f(feature_dim_);
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    std::span<const double> col(x.data() + b * x.rows(), input_dim_);
    for (std::size_t a = 0; a < n_actions_; ++a) {
      const double d = dq(static_cast<Eigen::Index>(a), b);
      if (d == 0.0) continue;
      phi_(col, a, f);
      for (std::size_t k = 0; k < feature_dim_; ++k) grad[k] += d * f[k];
    }
  }
}

nlohmann::json LinearQ::describe() const {
  nlohmann::json doc{{"kind", kind_}, {"input_dim", input_dim_}, {"n_actions", n_actions_},
                     {"feature_dim", feature_dim_}};
  if (kind_ == "linear_four_state") doc["alpha"] = alpha_;
  return doc;
}

// ─── Optimizers ─────────────────────────────────────────────────────────────

void adam_step(AdamState& state, std::vector<double>& params, const std::vector<double>& grads,
               const AdamConfig& config) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DefectError("adam_step: shape mismatch");
  }
  double scale = 1.0;
  if (config.clip_norm > 0.0) {
    double sq = 0.0;
    for (double g : grads) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > config.clip_norm) scale = config.clip_norm / norm;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] * scale;
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
  }
}

void sgd_step(std::vector<double>& params, const std::vector<double>& grads, double lr) {
  if (params.size() != grads.size()) throw DefectError("sgd_step: shape mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

double masked_mse(const Matrix& q, std::span<const std::size_t> actions, std::span<const double> targets,
                  Matrix& dq) {
  const auto batch = static_cast<std::size_t>(q.cols());
  if (actions.size() != batch || targets.size() != batch) throw DefectError("masked_mse: batch size mismatch");
  dq.setZero(q.rows(), q.cols());
  const double inv_b = 1.0 / static_cast<double>(batch);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto col = static_cast<Eigen::Index>(b), row = static_cast<Eigen::Index>(actions[b]);
    const double r = q(row, col) - targets[b];
    loss += r * r;
    dq(row, col) = 2.0 * r * inv_b;
  }
  return loss * inv_b;
}

// ─── Checkpoints ────────────────────────────────────────────────────────────

void save_checkpoint(const QModel& model, const std::string& stem) {
  nlohmann::json header = model.describe();
  header["n_params"] = model.n_params();
  header["dtype"] = "float64_le";
  std::ofstream(stem + ".json") << header.dump(2) << '\n';
  std::ofstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw InvalidArgument("cannot write " + stem + ".bin");
  for (double v : model.params()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    bin.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

std::unique_ptr<QModel> load_checkpoint(const std::string& stem) {
  std::ifstream in(stem + ".json");
  if (!in) throw InvalidArgument("cannot open " + stem + ".json");
  const auto header = nlohmann::json::parse(in);
  const auto kind = header.at("kind").get<std::string>();
  std::unique_ptr<QModel> model;
  if (kind == "mlp") {
    model = std::make_unique<Mlp>(header.at("widths").get<std::vector<std::size_t>>(),
                                  activation_from_string(header.at("activation").get<std::string>()), 0);
  } else if (kind == "linear_action_blocked") {
    model = std::make_unique<LinearQ>(LinearQ::action_blocked(header.at("input_dim").get<std::size_t>(),
                                                              header.at("n_actions").get<std::size_t>()));
  } else if (kind == "linear_four_state") {
    model = std::make_unique<LinearQ>(LinearQ::four_state(header.at("alpha").get<double>()));
  } else {
    throw InvalidArgument("unknown model kind '" + kind + "'");
  }
  const auto n = header.at("n_params").get<std::size_t>();
  if (n != model->n_params()) throw InvalidArgument(stem + ": parameter count does not match the shape");
  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw InvalidArgument("cannot open " + stem + ".bin");
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char bytes[8];
    if (!bin.read(reinterpret_cast<char*>(bytes), 8)) throw InvalidArgument(stem + ".bin: truncated");
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[k]) << (8 * k);
    model->params()[i] = std::bit_cast<double>(bits);
  }
  return model;
}

}  // namespace rldd
