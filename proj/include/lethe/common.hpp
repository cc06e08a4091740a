#pragma once

// Shared aliases and error taxonomy. The numeric core is templated on the
// scalar type: the pipeline runs in float, gradient checks instantiate the
// same code in double.

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace lethe {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Matf = Mat<float>;
using Matd = Mat<double>;
using Vecf = Vec<float>;
using Vecd = Vec<double>;

// Bad data reaches an operation: malformed records, empty answers, ids that
// do not resolve.
struct InputError : std::runtime_error {
  explicit InputError(const std::string& m) : std::runtime_error(m) {}
};

// A config value violates a documented constraint.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

// Non-finite values or a diverged run; carries the step where it happened.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m, long step_ = -1)
      : std::runtime_error(m), step(step_) {}
  long step;
};

}  // namespace lethe
