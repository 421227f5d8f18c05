#include "tvroa/trajopt.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include <Eigen/Eigenvalues>

namespace tvroa {

namespace {

void check_box(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, int n,
               bool required, const std::string& name) {
  if (lo.size() == 0 && hi.size() == 0 && !required) return;
  if (lo.size() != n || hi.size() != n) {
    throw ConfigError(name + " bounds: expected dimension " +
                      std::to_string(n));
  }
  for (int i = 0; i < n; ++i) {
    if (!(lo(i) <= hi(i))) {
      throw ConfigError(name + " bounds: min > max at component " +
                        std::to_string(i));
    }
  }
}

void check_psd(const Eigen::MatrixXd& W, int n, const std::string& name) {
  if (W.rows() != n || W.cols() != n) {
    throw ConfigError(name + ": expected " + std::to_string(n) + "x" +
                      std::to_string(n));
  }
  if ((W - W.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1 + W.norm())) {
    throw ConfigError(name + ": must be symmetric");
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(W);
  if (n > 0 && eig.eigenvalues().minCoeff() < -1e-12 * (1 + W.norm())) {
    throw ConfigError(name + ": must be positive semi-definite");
  }
}

void check_vector(const Eigen::VectorXd& v, int n, const std::string& name) {
  if (v.size() != n) {
    throw ConfigError(name + ": expected dimension " + std::to_string(n));
  }
}

// Narrows [lower, upper] of one variable to `value`.
void pin(Eigen::VectorXd& lower, Eigen::VectorXd& upper, int index,
         double value, const std::string& what) {
  if (value < lower(index) || value > upper(index)) {
    throw ConfigError(what + " lies outside the variable bounds");
  }
  lower(index) = upper(index) = value;
}

}  // namespace

DirectTranscription::DirectTranscription(
    std::shared_ptr<const MechanicalSystem> system, CostWeights weights,
    Bounds bounds, int num_intervals, double initial_dt)
    : system_(std::move(system)),
      weights_(std::move(weights)),
      bounds_(std::move(bounds)),
      num_intervals_(num_intervals),
      initial_dt_(initial_dt) {
  if (!system_) throw ConfigError("transcribe: null system");
  nq_ = system_->num_positions();
  nx_ = 2 * nq_;
  nu_ = system_->num_inputs();
  const int N = num_intervals_;
  if (N < 2) throw ConfigError("transcribe: need at least 2 intervals");

  if (weights_.terminal_weight.size() == 0) {
    weights_.terminal_weight = Eigen::MatrixXd::Zero(nx_, nx_);
  }
  if (!(weights_.time_weight >= 0)) {
    throw ConfigError("transcribe: time weight must be non-negative");
  }
  check_psd(weights_.input_weight, nu_, "input weight W_u");
  check_psd(weights_.terminal_weight, nx_, "terminal weight W_xf");

  const Bounds& b = bounds_;
  check_box(b.q_min, b.q_max, nq_, false, "position");
  check_box(b.v_min, b.v_max, nq_, false, "velocity");
  check_box(b.u_min, b.u_max, nu_, true, "actuation");
  check_vector(b.q0, nq_, "initial positions q0");
  check_vector(b.v0, nq_, "initial velocities v0");
  if (b.qf) check_vector(*b.qf, nq_, "final positions qf");
  if (b.vf) check_vector(*b.vf, nq_, "final velocities vf");
  if (!(b.dt_min > 0) || !(b.dt_min <= b.dt_max)) {
    throw ConfigError("transcribe: need 0 < dt_min <= dt_max");
  }
  if (initial_dt_ < b.dt_min || initial_dt_ > b.dt_max) {
    throw ConfigError("transcribe: initial step outside [dt_min, dt_max]");
  }
  for (const Waypoint& w : b.waypoints) {
    if (w.knot < 0 || w.knot > N) {
      throw ConfigError("waypoint knot " + std::to_string(w.knot) +
                        " outside [0, N]");
    }
    check_vector(w.positions, nq_, "waypoint positions");
  }

  num_variables_ = (N + 1) * nx_ + N * nu_ + 1;
  lower_ = Eigen::VectorXd::Constant(num_variables_, -kInf);
  upper_ = Eigen::VectorXd::Constant(num_variables_, kInf);
  for (int k = 0; k <= N; ++k) {
    const int s = state_index(k);
    if (b.q_min.size()) {
      lower_.segment(s, nq_) = b.q_min;
      upper_.segment(s, nq_) = b.q_max;
    }
    if (b.v_min.size()) {
      lower_.segment(s + nq_, nq_) = b.v_min;
      upper_.segment(s + nq_, nq_) = b.v_max;
    }
  }
  for (int k = 0; k < N; ++k) {
    lower_.segment(input_index(k), nu_) = b.u_min;
    upper_.segment(input_index(k), nu_) = b.u_max;
  }
  lower_(dt_index()) = b.dt_min;
  upper_(dt_index()) = b.dt_max;

  for (int i = 0; i < nq_; ++i) {
    pin(lower_, upper_, state_index(0) + i, b.q0(i), "initial position");
    pin(lower_, upper_, state_index(0) + nq_ + i, b.v0(i), "initial velocity");
    if (b.qf) pin(lower_, upper_, state_index(N) + i, (*b.qf)(i), "final position");
    if (b.vf) {
      pin(lower_, upper_, state_index(N) + nq_ + i, (*b.vf)(i),
          "final velocity");
    }
  }
  for (const Waypoint& w : b.waypoints) {
    for (int i = 0; i < nq_; ++i) {
      pin(lower_, upper_, state_index(w.knot) + i, w.positions(i),
          "waypoint " + std::to_string(w.knot));
    }
  }
}

DirectTranscription transcribe(std::shared_ptr<const MechanicalSystem> system,
                               const CostWeights& weights, const Bounds& bounds,
                               int num_intervals, double initial_dt) {
  return DirectTranscription(std::move(system), weights, bounds, num_intervals,
                             initial_dt);
}

double DirectTranscription::objective(const Eigen::VectorXd& z) const {
  const double dt = z(dt_index());
  double running = 0;
  for (int k = 0; k < num_intervals_; ++k) {
    const auto u = z.segment(input_index(k), nu_);
    running += weights_.time_weight + u.dot(weights_.input_weight * u);
  }
  const auto xN = z.segment(state_index(num_intervals_), nx_);
  return dt * running + xN.dot(weights_.terminal_weight * xN);
}

Eigen::VectorXd DirectTranscription::constraints(
    const Eigen::VectorXd& z) const {
  const double dt = z(dt_index());
  Eigen::VectorXd c(num_constraints());
  for (int k = 0; k < num_intervals_; ++k) {
    const auto x = z.segment(state_index(k), nx_);
    const auto next = z.segment(state_index(k + 1), nx_);
    const Eigen::VectorXd q = x.head(nq_), v = x.tail(nq_);
    const Eigen::VectorXd a =
        system_->acceleration(q, v, z.segment(input_index(k), nu_));
    c.segment(k * nx_, nq_) = next.head(nq_) - q - dt * v;
    c.segment(k * nx_ + nq_, nq_) = next.tail(nq_) - v - dt * a;
  }
  return c;
}

void DirectTranscription::derivatives(const Eigen::VectorXd& z,
                                      const Eigen::VectorXd& y,
                                      Derivatives* out) const {
  using Triplet = Eigen::Triplet<double>;
  const int N = num_intervals_;
  const int it = dt_index();
  const double dt = z(it);
  const Eigen::MatrixXd& Wu = weights_.input_weight;
  const Eigen::MatrixXd& Wf = weights_.terminal_weight;

  out->gradient = Eigen::VectorXd::Zero(num_variables_);
  std::vector<Triplet> jac, hess;
  jac.reserve(N * (nx_ * (3 + nx_ + nu_)));
  hess.reserve(N * (nu_ * nu_ + 2 * nu_ + 2 * nx_ + 2 * nu_ + (nx_ + nu_) * (nx_ + nu_)) +
               nx_ * nx_);

  auto sym = [&hess](int i, int j, double value) {
    hess.emplace_back(i, j, value);
    if (i != j) hess.emplace_back(j, i, value);
  };

  // Objective.
  double running = 0;
  for (int k = 0; k < N; ++k) {
    const int iu = input_index(k);
    const Eigen::VectorXd u = z.segment(iu, nu_);
    const Eigen::VectorXd Wuu = Wu * u;
    running += weights_.time_weight + u.dot(Wuu);
    out->gradient.segment(iu, nu_) = 2.0 * dt * Wuu;
    for (int i = 0; i < nu_; ++i) {
      for (int j = 0; j < nu_; ++j) {
        if (Wu(i, j) != 0) hess.emplace_back(iu + i, iu + j, 2.0 * dt * Wu(i, j));
      }
      sym(iu + i, it, 2.0 * Wuu(i));
    }
  }
  out->gradient(it) = running;
  const int iN = state_index(N);
  out->gradient.segment(iN, nx_) = 2.0 * Wf * z.segment(iN, nx_);
  for (int i = 0; i < nx_; ++i) {
    for (int j = 0; j < nx_; ++j) {
      if (Wf(i, j) != 0) hess.emplace_back(iN + i, iN + j, 2.0 * Wf(i, j));
    }
  }

  // Defects.
  Eigen::MatrixXd dq, dv, du;
  for (int k = 0; k < N; ++k) {
    const int ix = state_index(k), ixn = state_index(k + 1), iu = input_index(k);
    const int row = k * nx_;
    const Eigen::VectorXd q = z.segment(ix, nq_), v = z.segment(ix + nq_, nq_);
    const Eigen::VectorXd u = z.segment(iu, nu_);
    const Eigen::VectorXd a = system_->acceleration(q, v, u);
    system_->acceleration_jacobians(q, v, u, &dq, &dv, &du);

    for (int i = 0; i < nq_; ++i) {
      jac.emplace_back(row + i, ixn + i, 1.0);
      jac.emplace_back(row + i, ix + i, -1.0);
      jac.emplace_back(row + i, ix + nq_ + i, -dt);
      jac.emplace_back(row + i, it, -v(i));
      sym(it, ix + nq_ + i, -y(row + i));
    }
    const auto yv = y.segment(row + nq_, nq_);
    for (int i = 0; i < nq_; ++i) {
      const int r = row + nq_ + i;
      jac.emplace_back(r, ixn + nq_ + i, 1.0);
      jac.emplace_back(r, ix + nq_ + i, -1.0);
      for (int j = 0; j < nq_; ++j) {
        if (dq(i, j) != 0) jac.emplace_back(r, ix + j, -dt * dq(i, j));
        if (dv(i, j) != 0) jac.emplace_back(r, ix + nq_ + j, -dt * dv(i, j));
      }
      for (int j = 0; j < nu_; ++j) {
        if (du(i, j) != 0) jac.emplace_back(r, iu + j, -dt * du(i, j));
      }
      jac.emplace_back(r, it, -a(i));
    }
    // Cross terms of Δt·q̈ with its arguments.
    const Eigen::VectorXd hq = -(dq.transpose() * yv);
    const Eigen::VectorXd hv = -(dv.transpose() * yv);
    const Eigen::VectorXd hu = -(du.transpose() * yv);
    for (int j = 0; j < nq_; ++j) {
      if (hq(j) != 0) sym(it, ix + j, hq(j));
      if (hv(j) != 0) sym(it, ix + nq_ + j, hv(j));
    }
    for (int j = 0; j < nu_; ++j) {
      if (hu(j) != 0) sym(it, iu + j, hu(j));
    }
    // Curvature of −Δt·y_vᵀq̈ in (q, q̇, u).
    const Eigen::MatrixXd curvature =
        system_->acceleration_curvature(q, v, u, yv);
    auto var = [&](int i) { return i < nx_ ? ix + i : iu + (i - nx_); };
    for (int i = 0; i < curvature.rows(); ++i) {
      for (int j = 0; j < curvature.cols(); ++j) {
        if (curvature(i, j) != 0) {
          hess.emplace_back(var(i), var(j), -dt * curvature(i, j));
        }
      }
    }
  }

  out->jacobian.resize(num_constraints(), num_variables_);
  out->jacobian.setFromTriplets(jac.begin(), jac.end());
  out->hessian.resize(num_variables_, num_variables_);
  out->hessian.setFromTriplets(hess.begin(), hess.end());
}

Eigen::VectorXd DirectTranscription::pack(const Trajectory& trajectory) const {
  require_dim(trajectory.num_knots(), num_intervals_ + 1, "pack: knot count");
  require_dim(trajectory.num_states(), nx_, "pack: state dimension");
  require_dim(trajectory.num_inputs(), nu_, "pack: input dimension");
  Eigen::VectorXd z(num_variables_);
  for (int k = 0; k <= num_intervals_; ++k) {
    z.segment(state_index(k), nx_) = trajectory.states.col(k);
  }
  for (int k = 0; k < num_intervals_; ++k) {
    z.segment(input_index(k), nu_) = trajectory.inputs.col(k);
  }
  z(dt_index()) = trajectory.dt;
  return z;
}

Trajectory DirectTranscription::unpack(const Eigen::VectorXd& z) const {
  require_dim(z.size(), num_variables_, "unpack");
  Trajectory traj;
  traj.dt = z(dt_index());
  traj.states.resize(nx_, num_intervals_ + 1);
  traj.inputs.resize(nu_, num_intervals_);
  for (int k = 0; k <= num_intervals_; ++k) {
    traj.states.col(k) = z.segment(state_index(k), nx_);
  }
  for (int k = 0; k < num_intervals_; ++k) {
    traj.inputs.col(k) = z.segment(input_index(k), nu_);
  }
  return traj;
}

Trajectory DirectTranscription::default_initial_guess() const {
  const int N = num_intervals_;
  std::map<int, Eigen::VectorXd> anchors;
  anchors[0] = bounds_.q0;
  for (const Waypoint& w : bounds_.waypoints) anchors[w.knot] = w.positions;
  if (bounds_.qf) anchors[N] = *bounds_.qf;
  if (!anchors.count(N)) anchors[N] = anchors.rbegin()->second;

  Trajectory guess;
  guess.dt = initial_dt_;
  guess.states.resize(nx_, N + 1);
  guess.inputs = Eigen::MatrixXd::Zero(nu_, N);
  auto upper = anchors.begin();
  for (int k = 0; k <= N; ++k) {
    while (upper->first < k) ++upper;
    if (upper->first == k) {
      guess.states.col(k).head(nq_) = upper->second;
    } else {
      const auto lower = std::prev(upper);
      const double s = double(k - lower->first) / (upper->first - lower->first);
      guess.states.col(k).head(nq_) =
          (1 - s) * lower->second + s * upper->second;
    }
    const Eigen::VectorXd vf = bounds_.vf ? *bounds_.vf : bounds_.v0;
    const double s = double(k) / N;
    guess.states.col(k).tail(nq_) = (1 - s) * bounds_.v0 + s * vf;
  }
  return guess;
}

TrajoptResult solve(const DirectTranscription& program,
                    const std::optional<Trajectory>& initial_guess,
                    const SolverOptions& options) {
  const Trajectory guess =
      initial_guess ? *initial_guess : program.default_initial_guess();
  const SolverResult result =
      solve_augmented_lagrangian(program, program.pack(guess), options);
  return {program.unpack(result.solution), result.report};
}

FeasibilityReport check_feasibility(const MechanicalSystem& system,
                                    const Bounds& bounds,
                                    const Trajectory& traj) {
  traj.validate();
  const int nq = system.num_positions();
  const int N = traj.num_intervals();
  FeasibilityReport report;
  auto excess = [](double value, double lo, double hi) {
    return std::max({0.0, lo - value, value - hi});
  };
  for (int k = 0; k < N; ++k) {
    const Eigen::VectorXd q = traj.states.col(k).head(nq);
    const Eigen::VectorXd v = traj.states.col(k).tail(nq);
    const Eigen::VectorXd a =
        system.acceleration(q, v, traj.inputs.col(k));
    const double dq =
        (traj.states.col(k + 1).head(nq) - q - traj.dt * v).cwiseAbs().maxCoeff();
    const double dv =
        (traj.states.col(k + 1).tail(nq) - v - traj.dt * a).cwiseAbs().maxCoeff();
    report.max_defect = std::max({report.max_defect, dq, dv});
    for (int i = 0; i < traj.num_inputs(); ++i) {
      report.max_bound_violation =
          std::max(report.max_bound_violation,
                   excess(traj.inputs(i, k), bounds.u_min(i), bounds.u_max(i)));
    }
  }
  for (int k = 0; k <= N; ++k) {
    for (int i = 0; i < nq; ++i) {
      if (bounds.q_min.size()) {
        report.max_bound_violation = std::max(
            report.max_bound_violation,
            excess(traj.states(i, k), bounds.q_min(i), bounds.q_max(i)));
      }
      if (bounds.v_min.size()) {
        report.max_bound_violation = std::max(
            report.max_bound_violation,
            excess(traj.states(nq + i, k), bounds.v_min(i), bounds.v_max(i)));
      }
    }
  }
  report.max_bound_violation =
      std::max(report.max_bound_violation,
               excess(traj.dt, bounds.dt_min, bounds.dt_max));

  auto pin_error = [&](int k, int offset, const Eigen::VectorXd& target) {
    report.max_pin_error = std::max(
        report.max_pin_error,
        (traj.states.col(k).segment(offset, nq) - target).cwiseAbs().maxCoeff());
  };
  pin_error(0, 0, bounds.q0);
  pin_error(0, nq, bounds.v0);
  if (bounds.qf) pin_error(N, 0, *bounds.qf);
  if (bounds.vf) pin_error(N, nq, *bounds.vf);
  for (const Waypoint& w : bounds.waypoints) pin_error(w.knot, 0, w.positions);
  return report;
}

}  // namespace tvroa
