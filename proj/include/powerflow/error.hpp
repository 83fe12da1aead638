#pragma once

#include <stdexcept>
#include <string>

namespace powerflow {

// Invalid arguments, malformed trajectories, bad configuration values.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The enumerated universe (or a composition space) exceeds its cap.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced non-finite parameters or an exploding loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Root finding could not bracket a solution.
class BracketError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An internal consistency check failed (degenerate chart input, a self-check
// subcommand out of tolerance).
class AssertionFailure : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace powerflow
