#pragma once

#include <stdexcept>
#include <string>

namespace rldd {

/// Input violates a documented precondition (bad config, bad distribution...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An iterative solver or training run failed to converge or blew up.
class DivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exact computation refused because the instance is too large.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Requested capability is not available for this object (e.g. generative
/// access on an environment that only supports rollouts).
class UnsupportedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Internal invariant broken; indicates a bug rather than bad input.
class DefectError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace rldd
