#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Core>

#include "tvroa/common.hpp"

namespace tvroa {

/// Knot sequence on a uniform grid: states x_k for k = 0 … N (one column
/// per knot, x = (q, q̇)) and controls u_k for k = 0 … N-1.
struct Trajectory {
  double dt = 0;
  Eigen::MatrixXd states;
  Eigen::MatrixXd inputs;

  int num_knots() const { return static_cast<int>(states.cols()); }
  int num_intervals() const { return num_knots() - 1; }
  int num_states() const { return static_cast<int>(states.rows()); }
  int num_positions() const { return num_states() / 2; }
  int num_inputs() const { return static_cast<int>(inputs.rows()); }
  double time(int k) const { return k * dt; }
  double duration() const { return num_intervals() * dt; }

  /// Throws InputError unless dt > 0, there are at least two knots, the state
  /// dimension is even and there is one control per interval.
  void validate() const;
};

/// Index of the interval containing t, clamped to [0, N-1].
int interval_index(const Trajectory& trajectory, double t);

/// Reference state at time t inside interval k: cubic Hermite on positions
/// (the knot velocities are their slopes) and linear on velocities.
Eigen::VectorXd interpolate_state(const Trajectory& trajectory, int k,
                                  double t);
Eigen::VectorXd interpolate_state(const Trajectory& trajectory, double t);

/// Zero-order hold on the controls; zero after the last interval.
Eigen::VectorXd input_at(const Trajectory& trajectory, double t);

/// CSV: header `t,q0..,qd0..,u0..`, one row per knot, controls blank on the
/// final row.
void write_trajectory_csv(const Trajectory& trajectory,
                          const std::filesystem::path& path);
void write_trajectory_csv(const Trajectory& trajectory, std::ostream& out);
Trajectory read_trajectory_csv(const std::filesystem::path& path);
Trajectory read_trajectory_csv(std::istream& in);

}  // namespace tvroa
