#pragma once

// Time-varying LQR about a nominal trajectory.
//
// Error coordinates x̄ = x − x*(t), ū = u − u*(t). The cost-to-go matrix S(t)
// solves the differential Riccati equation
//
//   −Ṡ = SA + AᵀS − SBR⁻¹BᵀS + Q,   S(t_f) = Q_f,
//
// and the feedback law is u = u*(t) − K(t) x̄ with K = R⁻¹BᵀS.

#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "tvroa/dynamics.hpp"
#include "tvroa/trajectory.hpp"

namespace tvroa {

/// Stabilizing solution of AᵀS + SA − SBR⁻¹BᵀS + Q = 0. Matrix sign function
/// iteration on the Hamiltonian followed by Newton–Kleinman refinement.
/// Throws NumericalError, listing the residual history, if the residual does
/// not reach 1e-8·‖Q‖_max.
Eigen::MatrixXd solve_care(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                           const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R);

/// ‖AᵀS + SA − SBR⁻¹BᵀS + Q‖_max.
double care_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                     const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                     const Eigen::MatrixXd& S);

/// Right-hand side of the Riccati equation, Ṡ.
Eigen::MatrixXd riccati_derivative(const Eigen::MatrixXd& A,
                                   const Eigen::MatrixXd& B,
                                   const Eigen::MatrixXd& Q,
                                   const Eigen::MatrixXd& Rinv,
                                   const Eigen::MatrixXd& S);

struct TvlqrPolicy {
  Trajectory nominal;
  std::vector<Eigen::MatrixXd> S;  // per knot
  std::vector<Eigen::MatrixXd> K;  // per knot
  Eigen::MatrixXd Q, R, Qf;
  /// Infinite-horizon LQR about the final knot held at rest, (q*_N, 0).
  Eigen::MatrixXd S_inf, K_inf;

  int num_knots() const { return nominal.num_knots(); }
  int num_intervals() const { return nominal.num_intervals(); }
  int num_states() const { return nominal.num_states(); }
  int num_inputs() const { return nominal.num_inputs(); }
  double duration() const { return nominal.duration(); }
  const Eigen::MatrixXd& final_S() const { return S.back(); }
};

struct TvlqrOptions {
  int substeps = 10;  // RK4 steps per knot interval
  /// Allowed negative eigenvalue of S, relative to 1 + ‖S‖.
  double psd_tolerance = 1e-9;
};

/// Backward RK4 integration of the Riccati equation. A and B are linearly
/// interpolated between knots. S is symmetrized after every step and checked
/// for positive semi-definiteness at every knot (NumericalError otherwise).
/// `terminal` supplies the linearization about the final rest state used for
/// S_inf and K_inf; when Q_f is absent it defaults to S_inf.
TvlqrPolicy solve_tvlqr(const Linearization& linearization,
                        const Trajectory& nominal, const Eigen::MatrixXd& Q,
                        const Eigen::MatrixXd& R,
                        const std::optional<Eigen::MatrixXd>& Qf,
                        const Eigen::MatrixXd& A_terminal,
                        const Eigen::MatrixXd& B_terminal,
                        const TvlqrOptions& options = {});

/// Linearizes `system` along `nominal` and about (q*_N, 0), then solves.
TvlqrPolicy synthesize(const MechanicalSystem& system,
                       const Trajectory& nominal, const Eigen::MatrixXd& Q,
                       const Eigen::MatrixXd& R,
                       const std::optional<Eigen::MatrixXd>& Qf = std::nullopt,
                       const TvlqrOptions& options = {});

/// Largest relative residual of the finite-difference Riccati check
/// (S_{k+1} − S_k)/Δt ≈ Ṡ at interval midpoints, over all intervals.
double riccati_midpoint_residual(const TvlqrPolicy& policy,
                                 const Linearization& linearization);

/// Nominal state at t: cubic Hermite positions, linear velocities.
Eigen::VectorXd reference_state(const TvlqrPolicy& policy, double t);

/// u*(t) − K(t) x̄ with zero-order hold on K and u*. Throws InputError for t
/// outside [0, t_f]. At t_f the final knot gain applies with u* = 0.
Eigen::VectorXd feedback(const TvlqrPolicy& policy, double t,
                         const Eigen::VectorXd& x);

/// Same law with the interval fixed by the caller, so that t = t_{k+1} is
/// evaluated as the left limit of interval k.
Eigen::VectorXd feedback(const TvlqrPolicy& policy, int interval, double t,
                         const Eigen::VectorXd& x);

/// J* = x̄ᵀ S(t) x̄. At knots S_k and x*_k are used exactly; between knots S
/// is held from the left knot.
double cost_to_go(const TvlqrPolicy& policy, double t,
                  const Eigen::VectorXd& x);

/// J* at knot k.
double cost_to_go_at_knot(const TvlqrPolicy& policy, int k,
                          const Eigen::VectorXd& x);

/// JSON with ordered fields: version, dt, knot_times, states, inputs, Q, R,
/// Qf, S, K, S_inf, K_inf. Matrices are row-major nested arrays.
void write_policy_json(const TvlqrPolicy& policy,
                       const std::filesystem::path& path);
TvlqrPolicy read_policy_json(const std::filesystem::path& path);

}  // namespace tvroa
