#pragma once

// Built-in scenarios and the declarative JSON scenario format.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tvroa/dynamics.hpp"
#include "tvroa/nlp.hpp"
#include "tvroa/roa.hpp"
#include "tvroa/sim.hpp"
#include "tvroa/trajopt.hpp"
#include "tvroa/tvlqr.hpp"

namespace tvroa {

struct Scenario {
  std::string name;
  std::shared_ptr<const MechanicalSystem> system;
  /// Set for multibody plants; the double integrator has none.
  std::optional<MultibodyModel> model;

  // Trajectory optimization.
  CostWeights weights;
  Bounds bounds;
  int num_intervals = 100;
  double initial_dt = 0.1;
  SolverOptions solver;

  // Stabilization.
  Eigen::MatrixXd Q, R;
  std::optional<Eigen::MatrixXd> Qf;  // empty: S_∞

  // Simulation and estimation. `estimation.rollout` carries the integrator
  // step and saturation; the deadband there is off by default and
  // `deadband` holds the thresholds used when it is switched on.
  EstimationConfig estimation;
  Eigen::VectorXd deadband;

  // Detumble only.
  double omega0 = 0;            // rad/s
  Eigen::VectorXd grasp_pose;   // joint angles at capture
};

/// Planar chaser with a 3R arm holding a captured target, tumbling at 5°/s.
Scenario detumble_scenario();

/// Single rigid freeflyer flying a circle through three waypoints.
Scenario freeflyer_scenario();

/// 1-DoF unit-mass double integrator, rest to rest from 0 to 1, with tight
/// input bounds. A small problem whose region of attraction can be mapped by
/// brute force.
Scenario double_integrator_scenario();

/// Built-in scenario by name: "detumble", "freeflyer", "double_integrator".
Scenario builtin_scenario(const std::string& name);

/// Positions and velocities right after capture: arm at `grasp_pose`, base at
/// attitude 0, assembly center of mass at the origin, every body moving as a
/// rigid rotation at rate ω₀ about that center of mass.
Eigen::VectorXd post_capture_state(const MultibodyModel& model,
                                   const Eigen::VectorXd& grasp_pose,
                                   double omega0);

/// Rotational inertia of the rigid assembly about its center of mass.
double assembly_inertia(const MultibodyModel& model, const Eigen::VectorXd& q);

/// Offsets of an n × n grid filling a square of the given side centered at 0.
std::vector<Eigen::Vector2d> grid_offsets(int n = 5, double side = 1.0);

/// Reads a scenario file: {"base": name, ...overrides}. Throws ConfigError
/// with the line and column of the offending text.
Scenario load_scenario(const std::filesystem::path& path);
Scenario parse_scenario(const std::string& text,
                        const std::string& source = "<config>");

// Pipeline stages with the scenario's settings.

/// Transcribes and solves; throws SolverFailure if the solver gives up.
TrajoptResult optimize(const Scenario& scenario,
                       const std::optional<Trajectory>& initial_guess = std::nullopt);

/// RK4 resimulation of the solved controls at the scenario integrator step.
Trajectory reference_trajectory(const Scenario& scenario,
                                const Trajectory& solved);

TvlqrPolicy synthesize(const Scenario& scenario, const Trajectory& reference);

/// Rollout settings of the scenario, optionally with the deadband stage on.
RolloutConfig rollout_config(const Scenario& scenario, bool deadband = false);

}  // namespace tvroa
