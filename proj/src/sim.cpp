#include "tvroa/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace tvroa {

std::string to_string(Termination termination) {
  switch (termination) {
    case Termination::kCompleted:
      return "completed";
    case Termination::kFuelExceeded:
      return "fuel-exceeded";
    case Termination::kCostExceeded:
      return "cost-exceeded";
    case Termination::kDiverged:
      return "diverged";
  }
  return "unknown";
}

bool condition_input(const RolloutConfig& config, Eigen::VectorXd* u) {
  if (config.deadband.size()) {
    for (Eigen::Index i = 0; i < u->size(); ++i) {
      if (std::abs((*u)(i)) < config.deadband(i)) (*u)(i) = 0;
    }
  }
  bool clamped = false;
  if (config.u_min.size()) {
    for (Eigen::Index i = 0; i < u->size(); ++i) {
      const double v = std::clamp((*u)(i), config.u_min(i), config.u_max(i));
      clamped = clamped || v != (*u)(i);
      (*u)(i) = v;
    }
  }
  return clamped;
}

namespace {

// Integrator steps per knot interval.
int substeps(double knot_dt, double dt) {
  return std::max(1, static_cast<int>(std::ceil(knot_dt / dt - 1e-9)));
}

void validate_config(const RolloutConfig& config, const TvlqrPolicy& policy) {
  if (!(config.dt > 0)) throw InputError("rollout: dt must be positive");
  const int nu = policy.num_inputs();
  if (config.u_min.size() || config.u_max.size()) {
    require_dim(config.u_min.size(), nu, "rollout: u_min");
    require_dim(config.u_max.size(), nu, "rollout: u_max");
  }
  if (config.deadband.size()) {
    require_dim(config.deadband.size(), nu, "rollout: deadband");
  }
  if (!config.cost_limits.empty()) {
    require_dim(static_cast<Eigen::Index>(config.cost_limits.size()),
                policy.num_knots(), "rollout: cost limits");
  }
}

}  // namespace

RolloutResult rollout(const MechanicalSystem& system, const TvlqrPolicy& policy,
                      const Eigen::VectorXd& x0, const RolloutConfig& config) {
  require_dim(x0.size(), policy.num_states(), "rollout: x0");
  validate_config(config, policy);
  const int N = policy.num_intervals();
  const double knot_dt = policy.nominal.dt;
  const int steps = substeps(knot_dt, config.dt);
  const double h = knot_dt / steps;
  const double fuel_limit = config.fuel ? config.fuel->limit() : kInf;

  RolloutResult result;
  result.states.resize(policy.num_states(), N + 1);
  result.inputs.resize(policy.num_inputs(), N + 1);
  result.cost_to_go.reserve(N + 1);
  result.fuel.reserve(N + 1);

  Eigen::VectorXd x = x0;
  double fuel = 0;
  int reached = 0;

  // Reference for the stages of an integration step: the open-loop nominal
  // integrated alongside the plant from the knot state, so that a rollout
  // started on the nominal reproduces it exactly.
  auto command = [&](int k, const Eigen::VectorXd& state,
                     const Eigen::VectorXd& reference, bool* clamped) {
    Eigen::VectorXd u =
        policy.nominal.inputs.col(k) - policy.K[k] * (state - reference);
    const bool c = condition_input(config, &u);
    if (clamped) *clamped = *clamped || c;
    return u;
  };
  auto stop = [&](Termination why, int k) {
    result.termination = why;
    result.breach_knot = k;
  };
  // Records knot k; returns false if a knot monitor fired.
  auto record = [&](int k, const Eigen::VectorXd& u) {
    const double J = cost_to_go_at_knot(policy, k, x);
    result.states.col(k) = x;
    result.inputs.col(k) = u;
    result.cost_to_go.push_back(J);
    result.fuel.push_back(fuel);
    reached = k + 1;
    if (!config.cost_limits.empty() && J > config.cost_limits[k]) {
      stop(Termination::kCostExceeded, k);
      return false;
    }
    return true;
  };

  bool clamped = false;
  Eigen::VectorXd u = command(0, x, policy.nominal.states.col(0), &clamped);
  bool alive = record(0, u);
  for (int k = 0; k < N && alive; ++k) {
    const Eigen::VectorXd u_nom = policy.nominal.inputs.col(k);
    Eigen::VectorXd x_nom = policy.nominal.states.col(k);
    if (k > 0) {
      clamped = false;
      u = command(k, x, x_nom, &clamped);
    }
    for (int i = 0; i < steps; ++i) {
      // The interval is pinned: the last stage uses the gain of interval k.
      bool step_clamped = clamped;
      const Eigen::VectorXd n1 = system.state_derivative(x_nom, u_nom);
      const Eigen::VectorXd na = x_nom + 0.5 * h * n1;
      const Eigen::VectorXd n2 = system.state_derivative(na, u_nom);
      const Eigen::VectorXd nb = x_nom + 0.5 * h * n2;
      const Eigen::VectorXd n3 = system.state_derivative(nb, u_nom);
      const Eigen::VectorXd nc = x_nom + h * n3;
      const Eigen::VectorXd n4 = system.state_derivative(nc, u_nom);
      x_nom += (h / 6.0) * (n1 + 2.0 * n2 + 2.0 * n3 + n4);

      const Eigen::VectorXd k1 = system.state_derivative(x, u);
      const Eigen::VectorXd xa = x + 0.5 * h * k1;
      const Eigen::VectorXd k2 =
          system.state_derivative(xa, command(k, xa, na, &step_clamped));
      const Eigen::VectorXd xb = x + 0.5 * h * k2;
      const Eigen::VectorXd k3 =
          system.state_derivative(xb, command(k, xb, nb, &step_clamped));
      const Eigen::VectorXd xc = x + h * k3;
      const Eigen::VectorXd k4 =
          system.state_derivative(xc, command(k, xc, nc, &step_clamped));
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

      if (!x.allFinite() || !((x - x_nom).norm() <= config.divergence_limit)) {
        result.final_state = x;
        stop(Termination::kDiverged, k + 1);
        alive = false;
        break;
      }
      bool next_clamped = false;
      const Eigen::VectorXd u_next = command(k, x, x_nom, &next_clamped);
      fuel += 0.5 * h * (u.cwiseAbs().sum() + u_next.cwiseAbs().sum());
      if (step_clamped) ++result.saturated_steps;
      clamped = next_clamped;
      u = u_next;
      if (fuel > fuel_limit * (1.0 + 1e-9)) {
        result.final_state = x;
        stop(Termination::kFuelExceeded, k + 1);
        alive = false;
        break;
      }
    }
    if (!alive) break;
    if (k + 1 == N) {
      // Command at the final knot: the last held law, for the trace.
      alive = record(N, u);
    } else {
      alive = record(k + 1, command(k + 1, x, policy.nominal.states.col(k + 1),
                                    nullptr));
    }
  }
  result.states.conservativeResize(Eigen::NoChange, reached);
  result.inputs.conservativeResize(Eigen::NoChange, reached);
  if (result.final_state.size() == 0) result.final_state = x;
  return result;
}

double nominal_fuel(const Trajectory& trajectory) {
  trajectory.validate();
  return trajectory.dt * trajectory.inputs.cwiseAbs().sum();
}

Trajectory resimulate(const MechanicalSystem& system,
                      const Trajectory& trajectory, double dt) {
  trajectory.validate();
  require_dim(trajectory.num_states(), system.num_states(),
              "resimulate: state dimension");
  if (!(dt > 0)) throw InputError("resimulate: dt must be positive");
  const int steps = substeps(trajectory.dt, dt);
  const double h = trajectory.dt / steps;
  Trajectory out = trajectory;
  Eigen::VectorXd x = trajectory.states.col(0);
  for (int k = 0; k < trajectory.num_intervals(); ++k) {
    const Eigen::VectorXd u = trajectory.inputs.col(k);
    const auto f = [&](const Eigen::VectorXd& s) {
      return system.state_derivative(s, u);
    };
    for (int i = 0; i < steps; ++i) x = rk4_step(f, x, h);
    out.states.col(k + 1) = x;
  }
  return out;
}

void write_rollout_csv(const RolloutResult& result, double knot_dt,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  const int nx = static_cast<int>(result.states.rows());
  const int nu = static_cast<int>(result.inputs.rows());
  out << "t";
  for (int i = 0; i < nx; ++i) out << ",x" << i;
  for (int i = 0; i < nu; ++i) out << ",u" << i;
  out << ",J,F\n" << std::setprecision(17);
  for (int k = 0; k < result.knots_reached(); ++k) {
    out << k * knot_dt;
    for (int i = 0; i < nx; ++i) out << ',' << result.states(i, k);
    for (int i = 0; i < nu; ++i) out << ',' << result.inputs(i, k);
    out << ',' << result.cost_to_go[k] << ',' << result.fuel[k] << '\n';
  }
}

}  // namespace tvroa
