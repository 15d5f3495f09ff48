#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace rldd {

/// SplitMix64 finalizer. Used to derive independent child seeds.
std::uint64_t mix64(std::uint64_t x);

/// Pure seed derivation: derive_seed(root, {j, i}) is the seed of run i of
/// grid point j. Order of the path matters.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path);

/// Thin wrapper over mt19937_64. Uniform and categorical draws are computed
/// from raw engine output so they do not depend on the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::size_t index(std::size_t n);

  /// Draws an index with probability proportional to probs[i] (probs sum to ~1).
  std::size_t categorical(std::span<const double> probs);

  bool bernoulli(double p) { return uniform() < p; }

  /// Gamma(shape, 1) draw; backs the Dirichlet sampler.
  double gamma(double shape);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace rldd
