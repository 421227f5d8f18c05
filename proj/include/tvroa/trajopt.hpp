#pragma once

// Direct transcription with explicit Euler integration.
//
// Decision variables z = (x_0 … x_N, u_0 … u_{N-1}, Δt), a single shared
// step. Objective Σ_k Δt (w_t + u_kᵀ W_u u_k) + x_Nᵀ W_xf x_N. Equality
// constraints are the Euler defects
//
//   q_{k+1} − q_k − Δt q̇_k = 0
//   q̇_{k+1} − q̇_k − Δt q̈(q_k, q̇_k, u_k) = 0
//
// Boundary conditions and waypoints pin variables through equal lower and
// upper bounds; everything else is a box.

#include <algorithm>
#include <memory>
#include <optional>
#include <vector>

#include "tvroa/dynamics.hpp"
#include "tvroa/nlp.hpp"
#include "tvroa/trajectory.hpp"

namespace tvroa {

struct CostWeights {
  double time_weight = 0;
  Eigen::MatrixXd input_weight;     // W_u, nu × nu, symmetric PSD
  Eigen::MatrixXd terminal_weight;  // W_xf, nx × nx, symmetric PSD
};

struct Waypoint {
  int knot = 0;
  Eigen::VectorXd positions;
};

struct Bounds {
  Eigen::VectorXd q_min, q_max;  // empty means unbounded
  Eigen::VectorXd v_min, v_max;  // empty means unbounded
  Eigen::VectorXd u_min, u_max;  // required
  Eigen::VectorXd q0, v0;        // initial state, required
  std::optional<Eigen::VectorXd> qf, vf;
  std::vector<Waypoint> waypoints;
  double dt_min = 0.01;
  double dt_max = 0.2;
};

class DirectTranscription final : public ConstrainedProblem {
 public:
  DirectTranscription(std::shared_ptr<const MechanicalSystem> system,
                      CostWeights weights, Bounds bounds, int num_intervals,
                      double initial_dt);

  int num_variables() const override { return num_variables_; }
  int num_constraints() const override { return num_intervals_ * nx_; }
  const Eigen::VectorXd& lower_bounds() const override { return lower_; }
  const Eigen::VectorXd& upper_bounds() const override { return upper_; }

  double objective(const Eigen::VectorXd& z) const override;
  Eigen::VectorXd constraints(const Eigen::VectorXd& z) const override;
  void derivatives(const Eigen::VectorXd& z, const Eigen::VectorXd& y,
                   Derivatives* out) const override;

  // Layout.
  int num_intervals() const { return num_intervals_; }
  int state_index(int k) const { return k * nx_; }
  int input_index(int k) const { return (num_intervals_ + 1) * nx_ + k * nu_; }
  int dt_index() const { return num_variables_ - 1; }

  const MechanicalSystem& system() const { return *system_; }
  std::shared_ptr<const MechanicalSystem> system_ptr() const { return system_; }
  const CostWeights& weights() const { return weights_; }
  const Bounds& bounds() const { return bounds_; }
  double initial_dt() const { return initial_dt_; }

  Eigen::VectorXd pack(const Trajectory& trajectory) const;
  Trajectory unpack(const Eigen::VectorXd& z) const;

  /// Piecewise-linear positions through the pinned knots (initial state,
  /// waypoints, final positions), velocities interpolated between q̇₀ and
  /// q̇_f, zero controls.
  Trajectory default_initial_guess() const;

 private:
  std::shared_ptr<const MechanicalSystem> system_;
  CostWeights weights_;
  Bounds bounds_;
  int num_intervals_;
  double initial_dt_;
  int nq_, nx_, nu_;
  int num_variables_;
  Eigen::VectorXd lower_, upper_;
};

/// Validates and builds the program. Throws ConfigError for inconsistent
/// bounds (min > max, pins outside the box, bad dimensions).
DirectTranscription transcribe(std::shared_ptr<const MechanicalSystem> system,
                               const CostWeights& weights, const Bounds& bounds,
                               int num_intervals, double initial_dt);

struct TrajoptResult {
  Trajectory trajectory;
  SolverReport report;
};

/// Solves to max violation ≤ 1e-6 and stationarity ≤ 1e-4 (defaults of
/// SolverOptions). Throws SolverFailure on the iteration limit.
TrajoptResult solve(const DirectTranscription& program,
                    const std::optional<Trajectory>& initial_guess = std::nullopt,
                    const SolverOptions& options = {});

/// Constraint check evaluated directly on a trajectory, independent of the
/// solver: Euler defects, pins, and boxes.
struct FeasibilityReport {
  double max_defect = 0;
  double max_pin_error = 0;
  double max_bound_violation = 0;
  double max_violation() const {
    return std::max({max_defect, max_pin_error, max_bound_violation});
  }
};
FeasibilityReport check_feasibility(const MechanicalSystem& system,
                                    const Bounds& bounds,
                                    const Trajectory& trajectory);

}  // namespace tvroa
