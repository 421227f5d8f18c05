#pragma once

// Closed-loop rollouts under a TVLQR policy.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tvroa/dynamics.hpp"
#include "tvroa/trajectory.hpp"
#include "tvroa/tvlqr.hpp"

namespace tvroa {

/// Fuel limit F_max = (1 + α) F0; α = ∞ disables the limit.
struct FuelBudget {
  double nominal = 0;  // F0
  double alpha = kInf;

  double limit() const {
    return std::isinf(alpha) ? kInf : (1.0 + alpha) * nominal;
  }
};

struct RolloutConfig {
  double dt = 1e-3;  // integrator step; shortened so that it divides Δt
  /// Saturation bounds; empty disables clamping.
  Eigen::VectorXd u_min, u_max;
  /// Per-channel deadband thresholds; empty disables the stage.
  Eigen::VectorXd deadband;
  /// Largest tolerated ‖x − x*(t)‖ before the rollout is declared diverged.
  double divergence_limit = 1e6;
  std::optional<FuelBudget> fuel;
  /// Optional per-knot thresholds: stop at the first knot with J*_k above
  /// its limit. Only an early exit; recorded values do not depend on it.
  std::vector<double> cost_limits;
};

enum class Termination { kCompleted, kFuelExceeded, kCostExceeded, kDiverged };

std::string to_string(Termination termination);

struct RolloutResult {
  Termination termination = Termination::kCompleted;
  /// Knot at which a monitor fired (the end of the offending interval), or
  /// -1 when the rollout completed.
  int breach_knot = -1;
  /// One entry per knot reached, starting with knot 0.
  Eigen::MatrixXd states;
  Eigen::MatrixXd inputs;  // command applied at each reached knot
  std::vector<double> cost_to_go;
  std::vector<double> fuel;
  /// Integrator steps in which at least one channel was clamped.
  int saturated_steps = 0;
  /// State when the rollout stopped (equals the last column of `states`
  /// unless it stopped between knots).
  Eigen::VectorXd final_state;

  int knots_reached() const { return static_cast<int>(cost_to_go.size()); }
  bool completed() const { return termination == Termination::kCompleted; }
};

/// Applies the deadband then saturation stages of `config` to a command.
/// Returns true if any channel was clamped.
bool condition_input(const RolloutConfig& config, Eigen::VectorXd* u);

/// Integrates ẋ = f(x, sat(deadband(feedback(t, x)))) with fixed-step RK4,
/// evaluating the cost-to-go at every knot and the fuel F = ∫Σ|uᵢ| dt by
/// trapezoidal quadrature at integrator resolution. Inside interval k the gain
/// and u*_k are held and x*(t) is the open-loop nominal integrated with the
/// same steps from x*_k.
RolloutResult rollout(const MechanicalSystem& system, const TvlqrPolicy& policy,
                      const Eigen::VectorXd& x0, const RolloutConfig& config);

/// F0 of a trajectory under zero-order hold: Σ_k Δt Σᵢ|u_k,i|.
double nominal_fuel(const Trajectory& trajectory);

/// Open-loop RK4 integration of the trajectory's controls (zero-order hold)
/// from its first state, sampled back at the knots. Used to turn an Euler
/// transcription into a reference that the simulator reproduces exactly.
Trajectory resimulate(const MechanicalSystem& system,
                      const Trajectory& trajectory, double dt);

/// CSV trace: t, x…, u…, J*, F, one row per reached knot.
void write_rollout_csv(const RolloutResult& result, double knot_dt,
                       const std::filesystem::path& path);

}  // namespace tvroa
