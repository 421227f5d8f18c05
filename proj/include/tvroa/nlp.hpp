#pragma once

// Bound-constrained augmented Lagrangian method for
//
//   minimize f(z)  subject to  c(z) = 0,  lower ≤ z ≤ upper.
//
// Outer loop: first-order multiplier updates with penalty growth. A candidate
// outer iterate that increases the constraint violation is rejected and
// re-solved with a larger penalty, so accepted iterates have non-increasing
// infeasibility. Inner loop: projected Newton (Bertsekas) on the augmented
// Lagrangian with the Hessian ∇²f + Σ yᵢ∇²cᵢ + ρJᵀJ, a diagonal shift when
// that is not positive definite, a second-order correction for constraint
// curvature, and an Armijo search along the projected arc.

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace tvroa {

using SparseMatrix = Eigen::SparseMatrix<double>;

class ConstrainedProblem {
 public:
  virtual ~ConstrainedProblem() = default;

  virtual int num_variables() const = 0;
  virtual int num_constraints() const = 0;
  virtual const Eigen::VectorXd& lower_bounds() const = 0;
  virtual const Eigen::VectorXd& upper_bounds() const = 0;

  virtual double objective(const Eigen::VectorXd& z) const = 0;
  virtual Eigen::VectorXd constraints(const Eigen::VectorXd& z) const = 0;

  struct Derivatives {
    Eigen::VectorXd gradient;  // ∇f
    SparseMatrix jacobian;     // ∂c/∂z
    SparseMatrix hessian;      // ∇²f + Σ yᵢ ∇²cᵢ, symmetric, full storage
  };
  /// First derivatives and the symmetric Hessian of f + yᵀc.
  virtual void derivatives(const Eigen::VectorXd& z, const Eigen::VectorXd& y,
                           Derivatives* out) const = 0;
};

struct SolverOptions {
  double feasibility_tolerance = 1e-6;   // ‖c‖∞
  double stationarity_tolerance = 1e-4;  // ‖z − P(z − ∇ℓ)‖∞
  double initial_penalty = 10.0;
  double penalty_growth = 10.0;
  double max_penalty = 1e12;
  int max_outer_iterations = 60;
  int max_inner_iterations = 300;
  bool verbose = false;
};

struct SolverReport {
  bool converged = false;
  int outer_iterations = 0;
  int inner_iterations = 0;
  double penalty = 0;
  double objective = 0;
  double max_violation = 0;
  double stationarity = 0;
  /// ‖c‖∞ at every accepted outer iterate, starting with the initial guess.
  std::vector<double> infeasibility_history;

  std::string summary() const;
};

struct SolverResult {
  Eigen::VectorXd solution;
  Eigen::VectorXd multipliers;
  SolverReport report;
};

/// Iteration or penalty limit reached without meeting the tolerances. Carries
/// the best (least infeasible) accepted iterate.
class SolverFailure : public std::runtime_error {
 public:
  SolverFailure(const std::string& what, SolverResult best)
      : std::runtime_error(what), best_(std::move(best)) {}
  const SolverResult& best() const { return best_; }

 private:
  SolverResult best_;
};

/// Projection of z onto the box.
Eigen::VectorXd project_to_bounds(const ConstrainedProblem& problem,
                                  const Eigen::VectorXd& z);

/// ‖z − P(z − g)‖∞.
double projected_gradient_norm(const ConstrainedProblem& problem,
                               const Eigen::VectorXd& z,
                               const Eigen::VectorXd& g);

SolverResult solve_augmented_lagrangian(const ConstrainedProblem& problem,
                                        const Eigen::VectorXd& initial_guess,
                                        const SolverOptions& options = {});

}  // namespace tvroa
