// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace silab {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid arguments, malformed configuration, violated preconditions.
/// The CLI maps this to exit code 2.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Numeric-domain failures: non-finite inputs, degenerate norms,
/// failed reconstruction checks. The CLI maps this to exit code 1.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An activation was passed to a routine whose closed form only holds
/// for (sign-flipped) ReLU.
class UnsupportedActivationError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

/// Explicit-Euler step size too large for the quadratic objective.
class InstabilityError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

/// A sample-size bracket that cannot contain the threshold being probed.
class InfeasibleBracketError : public Error {
 public:
  using Error::Error;
};

}  // namespace silab
