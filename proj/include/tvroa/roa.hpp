#pragma once

// Probabilistic funnel estimation by exhaustive closed-loop simulation.
//
// The funnel starts unbounded at every knot except the outlet, which is fixed
// at ρ_f. Each simulation draws an initial state from the current inlet and
// is rolled out under the policy; if it breaks a constraint, or its
// cost-to-go exceeds the current threshold at knot k, all thresholds before
// k are lowered to the cost-to-go values that simulation recorded there.
// Thresholds only ever shrink.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tvroa/dynamics.hpp"
#include "tvroa/funnel.hpp"
#include "tvroa/rng.hpp"
#include "tvroa/sim.hpp"
#include "tvroa/tvlqr.hpp"

namespace tvroa {

/// Uniform sample from the closed unit ball in `dim` dimensions: Gaussian
/// direction, radius U^{1/dim}.
Eigen::VectorXd sample_unit_sphere(int dim, Rng& rng);

/// Uniform sample on the unit sphere surface.
Eigen::VectorXd sample_sphere_surface(int dim, Rng& rng);

/// Uniform sampling of {x | (x − c)ᵀ S (x − c) ≤ ρ}. With ρ⁻¹S = W Λ Wᵀ, a
/// unit-ball sample y maps to x = c + W Λ^{-1/2} y.
class EllipsoidSampler {
 public:
  /// Throws ConfigError unless S is symmetric positive definite and
  /// 0 < ρ < ∞.
  EllipsoidSampler(Eigen::VectorXd center, const Eigen::MatrixXd& S,
                   double rho);

  Eigen::VectorXd sample(Rng& rng) const;
  /// Image of a point of the unit ball.
  Eigen::VectorXd map(const Eigen::VectorXd& y) const;

  const Eigen::VectorXd& center() const { return center_; }
  const Eigen::MatrixXd& shape() const { return S_; }
  double rho() const { return rho_; }
  const Eigen::MatrixXd& eigenvectors() const { return W_; }
  const Eigen::VectorXd& eigenvalues() const { return lambda_; }

 private:
  Eigen::VectorXd center_;
  Eigen::MatrixXd S_;
  double rho_;
  Eigen::MatrixXd W_;
  Eigen::VectorXd lambda_;
  Eigen::MatrixXd transform_;  // W Λ^{-1/2}
};

/// ρ_f = x̄_maxᵀ S(t_f) x̄_max.
double rho_final(const TvlqrPolicy& policy, const Eigen::VectorXd& goal_deviation);

struct OutletCheck {
  bool passed = false;
  int samples = 0;
  int failures = 0;
  /// Largest V(t)/V(0) seen along any trajectory.
  double worst_ratio = 0;
};

/// Samples `samples` states on the boundary of the outlet ellipsoid, rolls
/// them out for `duration` seconds under the infinite-horizon LQR about the
/// final rest state, and requires V = x̄ᵀS_∞x̄ never to exceed its initial
/// value at any `sample_period` and to end below it. Under saturation V need
/// not be monotone, but a trajectory that stays in the outlet and ends lower
/// still certifies it.
OutletCheck check_outlet(const MechanicalSystem& system,
                         const TvlqrPolicy& policy, double rho_f,
                         const RolloutConfig& rollout_config,
                         std::uint64_t seed, int samples = 100,
                         double duration = 10.0, double sample_period = 0.1);

struct EstimationConfig {
  int num_simulations = 1000;
  Eigen::VectorXd goal_deviation;  // x̄_max
  double fuel_alpha = kInf;
  std::uint64_t seed = 0;
  /// ρ_boot = bootstrap_factor · ρ_f while the inlet is still unbounded.
  double bootstrap_factor = 1000;
  /// Integrator step, saturation and deadband; the fuel budget and cost
  /// limits are filled in by the estimator.
  RolloutConfig rollout;
  bool parallel = false;
  int threads = 0;     // 0: hardware concurrency
  int batch_size = 0;  // 0: 4 per thread
  bool check_outlet = true;
};

struct ShrinkUpdate {
  int knot = 0;
  double rho = 0;
};

struct SimulationRecord {
  int index = 0;  // j, from 1
  Eigen::VectorXd x0;
  Termination termination = Termination::kCompleted;
  /// Knot at which the simulation left the funnel or broke a constraint;
  /// -1 if it stayed inside throughout.
  int breach_knot = -1;
  std::vector<ShrinkUpdate> updates;
};

struct EstimationResult {
  Funnel funnel;
  double rho_f = 0;
  double nominal_fuel = 0;
  std::vector<SimulationRecord> log;
  std::optional<OutletCheck> outlet;
  int bootstrap_samples = 0;  // simulations drawn while ρ₀ was unbounded
};

/// Algorithm driver. Sequential mode is deterministic for a given seed.
/// Parallel mode simulates batches against a frozen snapshot and merges so
/// that every threshold is at most the sequential value for the same
/// candidates. Throws EstimationError if simulations ran but the inlet never
/// became finite.
EstimationResult estimate_funnel(const MechanicalSystem& system,
                                 const TvlqrPolicy& policy,
                                 const EstimationConfig& config);

/// Same shrinking rule applied to a fixed list of initial states in order.
/// A candidate outside the current inlet exits at knot 0 and shrinks nothing.
EstimationResult estimate_funnel_from_candidates(
    const MechanicalSystem& system, const TvlqrPolicy& policy,
    const std::vector<Eigen::VectorXd>& candidates,
    const EstimationConfig& config);

/// One simulation's outcome against thresholds `rho`: the knot at which it
/// left (or -1), and the shrink it implies.
struct ShrinkDecision {
  int breach_knot = -1;
  std::vector<ShrinkUpdate> updates;
};
ShrinkDecision shrink_decision(const RolloutResult& rollout,
                               const std::vector<double>& rho);

struct Interval {
  double low = 0, high = 1;
};

/// Wilson score interval for `successes` out of `trials` at z (default 95%).
Interval wilson_interval(int successes, int trials, double z = 1.959963984540054);

struct VerificationTrial {
  Eigen::VectorXd x0;
  bool success = false;
  Termination termination = Termination::kCompleted;
  double final_cost = 0;
  double terminal_speed = 0;  // ‖q̇(t_f)‖
  Eigen::MatrixXd states;     // knots reached
};

struct VerificationResult {
  int trials = 0;
  int successes = 0;
  double fraction = 1;
  Interval wilson;
  std::vector<VerificationTrial> details;
};

/// Fresh inlet samples rolled out under `rollout_config`. A trial succeeds if
/// it completes without a monitor breach and J*(t_f) < ρ_f. Throws InputError
/// if the inlet is unbounded.
VerificationResult verify_funnel(const MechanicalSystem& system,
                                 const TvlqrPolicy& policy,
                                 const Funnel& funnel, int n_check,
                                 std::uint64_t seed,
                                 const RolloutConfig& rollout_config);

}  // namespace tvroa
