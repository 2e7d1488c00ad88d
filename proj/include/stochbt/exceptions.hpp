#pragma once

#include <stdexcept>
#include <string>

namespace stochbt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent dimensions, invalid parameters, unreadable configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Generic numerical failure (eigen-solver breakdown, non-convergence).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// The shifted generalized Lyapunov operator is not stable for the requested shift.
class StabilityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// A matrix that must be SPD / invertible is not, to working precision.
class ConditioningError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Every Monte Carlo path (or a required path) blew up.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Requested operation is not available for this input (e.g. a custom
/// nonlinearity without a Jacobian).
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

}  // namespace stochbt
