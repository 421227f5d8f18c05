#include "tvroa/nlp.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include <Eigen/SparseCholesky>

namespace tvroa {

std::string SolverReport::summary() const {
  std::ostringstream out;
  out << (converged ? "converged" : "not converged") << " after "
      << outer_iterations << " outer / " << inner_iterations
      << " inner iterations; max violation " << max_violation
      << ", stationarity " << stationarity << ", penalty " << penalty
      << ", objective " << objective;
  return out.str();
}

Eigen::VectorXd project_to_bounds(const ConstrainedProblem& problem,
                                  const Eigen::VectorXd& z) {
  return z.cwiseMax(problem.lower_bounds()).cwiseMin(problem.upper_bounds());
}

double projected_gradient_norm(const ConstrainedProblem& problem,
                               const Eigen::VectorXd& z,
                               const Eigen::VectorXd& g) {
  return (z - project_to_bounds(problem, z - g)).lpNorm<Eigen::Infinity>();
}

namespace {

double inf_norm(const Eigen::VectorXd& v) {
  return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>();
}

class AugmentedLagrangian {
 public:
  AugmentedLagrangian(const ConstrainedProblem& problem,
                      const Eigen::VectorXd& lambda, double penalty)
      : problem_(problem), lambda_(lambda), penalty_(penalty) {}

  double penalty() const { return penalty_; }

  double value(const Eigen::VectorXd& z) const {
    const Eigen::VectorXd c = problem_.constraints(z);
    return problem_.objective(z) + lambda_.dot(c) +
           0.5 * penalty_ * c.squaredNorm();
  }

  // Quadratic model at z: constraints, their Jacobian, the gradient and the
  // Hessian ∇²f + Σ(λ + ρc)ᵢ∇²cᵢ + ρJᵀJ.
  struct Model {
    Eigen::VectorXd c, g;
    SparseMatrix J, H;
  };
  void model(const Eigen::VectorXd& z, Model* m) const {
    m->c = problem_.constraints(z);
    const Eigen::VectorXd y = lambda_ + penalty_ * m->c;
    ConstrainedProblem::Derivatives d;
    problem_.derivatives(z, y, &d);
    m->g = d.gradient;
    m->J = std::move(d.jacobian);
    if (problem_.num_constraints() > 0) {
      m->g.noalias() += m->J.transpose() * y;
      const SparseMatrix JtJ = SparseMatrix(m->J.transpose()) * m->J;
      m->H = d.hessian + penalty_ * JtJ;
    } else {
      m->H = std::move(d.hessian);
    }
  }

 private:
  const ConstrainedProblem& problem_;
  const Eigen::VectorXd& lambda_;
  double penalty_;
};

struct InnerStats {
  int iterations = 0;
  double projected_gradient = 0;
};

// Projected Newton on the augmented Lagrangian. Stops when the projected
// gradient is below `tolerance` or no further progress is possible.
//
// With a large penalty the merit is a narrow curved valley around c = 0 and a
// straight Newton step leaves it through the constraint curvature. Each step
// therefore carries a second-order correction s that cancels the curvature
// residual c(z + d) − c(z) − J d, and the search runs along z + αd + α²s.
InnerStats minimize_in_box(const ConstrainedProblem& problem,
                           const AugmentedLagrangian& merit,
                           Eigen::VectorXd* z_io, double tolerance,
                           int max_iterations) {
  Eigen::VectorXd& z = *z_io;
  const Eigen::VectorXd& lo = problem.lower_bounds();
  const Eigen::VectorXd& hi = problem.upper_bounds();
  const Eigen::Index n = z.size();
  const bool constrained = problem.num_constraints() > 0;

  InnerStats stats;
  double shift = 0;  // δ in (H + δI) d = −g
  double value = merit.value(z);
  AugmentedLagrangian::Model m;
  std::vector<char> active(n);
  Eigen::SimplicialLDLT<SparseMatrix> ldlt;

  for (; stats.iterations < max_iterations; ++stats.iterations) {
    merit.model(z, &m);
    const Eigen::VectorXd& g = m.g;
    stats.projected_gradient = projected_gradient_norm(problem, z, g);
    // A multiplier update can leave the gradient below tolerance while the
    // constraints still move under one Newton step, so always try one.
    if (stats.projected_gradient <= tolerance &&
        (stats.iterations > 0 || stats.projected_gradient == 0)) {
      break;
    }

    const double eps = std::min(stats.projected_gradient, 1e-6);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double band = eps * (1.0 + std::abs(z(i)));
      active[i] = lo(i) == hi(i) || (z(i) <= lo(i) + band && g(i) > 0) ||
                  (z(i) >= hi(i) - band && g(i) < 0);
    }
    // Reduced system: decouple the active variables.
    m.H.prune([&](Eigen::Index row, Eigen::Index col, double) {
      return !active[row] && !active[col];
    });
    const Eigen::VectorXd diag = m.H.diagonal();
    Eigen::VectorXd rhs = -g;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (active[i]) rhs(i) = 0;
    }

    bool stepped = false;
    bool pattern_analyzed = false;  // the pattern follows the active set
    for (int attempt = 0; attempt < 30 && !stepped; ++attempt) {
      SparseMatrix K = m.H;
      for (Eigen::Index i = 0; i < n; ++i) {
        K.coeffRef(i, i) = active[i] ? 1.0 : diag(i) + shift;
      }
      K.makeCompressed();
      if (!pattern_analyzed) {
        ldlt.analyzePattern(K);
        pattern_analyzed = true;
      }
      ldlt.factorize(K);
      Eigen::VectorXd d;
      // Only a positive definite model gives a trustworthy Newton step.
      if (ldlt.info() == Eigen::Success && ldlt.vectorD().minCoeff() > 0) {
        d = ldlt.solve(rhs);
      }
      if (d.size() != n || !d.allFinite() || g.dot(d) >= 0) {
        shift = std::max(shift * 10.0, 1e-6);
        continue;
      }

      Eigen::VectorXd correction = Eigen::VectorXd::Zero(n);
      if (constrained) {
        const Eigen::VectorXd full = project_to_bounds(problem, z + d);
        const Eigen::VectorXd residual =
            problem.constraints(full) - m.c - m.J * (full - z);
        Eigen::VectorXd rhs2 = -merit.penalty() * (m.J.transpose() * residual);
        for (Eigen::Index i = 0; i < n; ++i) {
          if (active[i]) rhs2(i) = 0;
        }
        correction = ldlt.solve(rhs2);
        if (!correction.allFinite()) correction.setZero();
      }

      double alpha = 1.0;
      for (int ls = 0; ls < 40; ++ls, alpha *= 0.5) {
        const Eigen::VectorXd trial = project_to_bounds(
            problem, z + alpha * d + (alpha * alpha) * correction);
        const double slope = g.dot(trial - z);
        if (slope >= 0) continue;
        const double trial_value = merit.value(trial);
        if (std::isfinite(trial_value) && trial_value <= value + 1e-4 * slope) {
          z = trial;
          value = trial_value;
          stepped = true;
          break;
        }
      }
      if (stepped) {
        shift = shift > 1e-9 ? shift / 4.0 : 0.0;
      } else {
        shift = std::max(shift * 10.0, 1e-6);
      }
    }
    if (!stepped) break;
  }
  if (stats.iterations == max_iterations) {
    merit.model(z, &m);
    stats.projected_gradient = projected_gradient_norm(problem, z, m.g);
  }
  return stats;
}

}  // namespace

SolverResult solve_augmented_lagrangian(const ConstrainedProblem& problem,
                                        const Eigen::VectorXd& initial_guess,
                                        const SolverOptions& options) {
  if (initial_guess.size() != problem.num_variables()) {
    throw std::invalid_argument(
        "solve_augmented_lagrangian: initial guess has wrong dimension");
  }
  // Violations below this floor count as zero for the monotonicity test.
  const double floor = 0.1 * options.feasibility_tolerance;
  const double inner_tolerance = 0.5 * options.stationarity_tolerance;

  SolverResult result;
  SolverReport& report = result.report;
  Eigen::VectorXd z = project_to_bounds(problem, initial_guess);
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(problem.num_constraints());
  double penalty = options.initial_penalty;

  double infeasibility = std::max(inf_norm(problem.constraints(z)), floor);
  report.infeasibility_history.push_back(infeasibility);
  result.solution = z;
  result.multipliers = lambda;

  for (int outer = 1; outer <= options.max_outer_iterations; ++outer) {
    report.outer_iterations = outer;
    Eigen::VectorXd trial = z;
    const AugmentedLagrangian merit(problem, lambda, penalty);
    const InnerStats inner = minimize_in_box(problem, merit, &trial,
                                             inner_tolerance,
                                             options.max_inner_iterations);
    report.inner_iterations += inner.iterations;

    const Eigen::VectorXd c = problem.constraints(trial);
    const double trial_infeasibility = std::max(inf_norm(c), floor);
    if (options.verbose) {
      std::cerr << "  AL outer " << outer << ": penalty " << penalty
                << ", violation " << inf_norm(c) << ", inner "
                << inner.iterations << " (pg " << inner.projected_gradient
                << ")\n";
    }
    if (trial_infeasibility > infeasibility) {
      penalty *= options.penalty_growth;
      if (penalty > options.max_penalty) break;
      continue;
    }

    z = trial;
    lambda += penalty * c;
    if (trial_infeasibility > 0.25 * infeasibility) {
      penalty *= options.penalty_growth;
    }
    infeasibility = trial_infeasibility;
    report.infeasibility_history.push_back(infeasibility);

    result.solution = z;
    result.multipliers = lambda;
    report.max_violation = inf_norm(c);
    report.stationarity = inner.projected_gradient;
    report.objective = problem.objective(z);
    report.penalty = penalty;

    if (report.max_violation <= options.feasibility_tolerance &&
        report.stationarity <= options.stationarity_tolerance) {
      report.converged = true;
      return result;
    }
    if (penalty > options.max_penalty) break;
  }

  report.penalty = penalty;
  report.max_violation = inf_norm(problem.constraints(result.solution));
  report.objective = problem.objective(result.solution);
  throw SolverFailure("augmented Lagrangian did not converge: " +
                          report.summary(),
                      result);
}

}  // namespace tvroa
