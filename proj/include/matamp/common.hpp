#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace matamp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Invalid user-supplied parameters (bad shapes, out-of-range values, malformed config).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical precondition failed (non-PSD covariance beyond tolerance, singular block).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An AMP run produced a non-finite iterate.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(int iteration, const std::string& what)
      : NumericalError("diverged at iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

}  // namespace matamp
