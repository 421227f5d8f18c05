#pragma once

#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace tvroa {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Bad arguments: dimension mismatches, out-of-range indices and times.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Inconsistent model, bounds or scenario configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical routine could not deliver its contract (singular matrix,
/// loss of definiteness, non-convergence).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Funnel estimation could not produce a finite inlet.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_dim(Eigen::Index actual, Eigen::Index expected,
                        const char* what) {
  if (actual != expected) {
    throw InputError(std::string(what) + ": expected dimension " +
                     std::to_string(expected) + ", got " +
                     std::to_string(actual));
  }
}

/// x̄ᵀ S x̄ for a symmetric S.
inline double quadratic_form(const Eigen::MatrixXd& S,
                             const Eigen::VectorXd& xbar) {
  return xbar.dot(S * xbar);
}

}  // namespace tvroa
