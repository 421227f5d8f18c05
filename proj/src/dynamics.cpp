#include "tvroa/dynamics.hpp"

#include <algorithm>

#include "tvroa/trajectory.hpp"

namespace tvroa {

namespace {

void validate_positive(double value, const char* what) {
  if (!(value > 0) || !std::isfinite(value)) {
    throw ConfigError(std::string("MultibodyModel: ") + what +
                      " must be strictly positive and finite");
  }
}

}  // namespace

Link fold_payload(const Link& link, const Payload& payload) {
  Link body = link;
  body.mass = link.mass + payload.mass;
  body.com_offset =
      (link.mass * link.com_offset + payload.mass * payload.com_offset) /
      body.mass;
  const double dl = link.com_offset - body.com_offset;
  const double dp = payload.com_offset - body.com_offset;
  body.inertia = link.inertia + link.mass * dl * dl + payload.inertia +
                 payload.mass * dp * dp;
  return body;
}

MultibodyModel::MultibodyModel(double base_mass, double base_inertia)
    : MultibodyModel(base_mass, base_inertia, Eigen::Vector2d::Zero(), {}) {}

MultibodyModel::MultibodyModel(double base_mass, double base_inertia,
                               Eigen::Vector2d mount, std::vector<Link> links,
                               std::optional<Payload> payload)
    : base_mass_(base_mass),
      base_inertia_(base_inertia),
      mount_(std::move(mount)),
      links_(std::move(links)),
      payload_(std::move(payload)) {
  validate_positive(base_mass_, "base mass");
  validate_positive(base_inertia_, "base inertia");
  for (const Link& link : links_) {
    validate_positive(link.mass, "link mass");
    validate_positive(link.inertia, "link inertia");
    if (!(link.length >= 0)) {
      throw ConfigError("MultibodyModel: link length must be non-negative");
    }
  }
  bodies_ = links_;
  if (payload_) {
    if (links_.empty()) {
      throw ConfigError("MultibodyModel: a payload needs at least one link");
    }
    validate_positive(payload_->mass, "payload mass");
    validate_positive(payload_->inertia, "payload inertia");
    bodies_.back() = fold_payload(links_.back(), *payload_);
  }
}

double MultibodyModel::total_mass() const {
  double m = base_mass_;
  for (const Link& body : bodies_) m += body.mass;
  return m;
}

Momentum momentum(const MultibodyModel& model, const Eigen::VectorXd& q,
                  const Eigen::VectorXd& qdot) {
  require_dim(qdot.size(), model.num_positions(), "momentum: qdot");
  const Eigen::VectorXd h = mass_matrix<double>(model, q) * qdot;
  Momentum out;
  out.linear = h.head<2>();
  out.angular = h(2) + q(0) * out.linear.y() - q(1) * out.linear.x();
  return out;
}

double kinetic_energy(const MultibodyModel& model, const Eigen::VectorXd& q,
                      const Eigen::VectorXd& qdot) {
  require_dim(qdot.size(), model.num_positions(), "kinetic_energy: qdot");
  return 0.5 * qdot.dot(mass_matrix<double>(model, q) * qdot);
}

Eigen::Vector2d center_of_mass(const MultibodyModel& model,
                               const Eigen::VectorXd& q) {
  const auto kin = chain_kinematics<double>(model, q);
  Eigen::Vector2d weighted = model.base_mass() * kin.base;
  for (int i = 0; i < model.num_joints(); ++i) {
    weighted += model.bodies()[i].mass * kin.com[i];
  }
  return weighted / model.total_mass();
}

// ---------------------------------------------------------------------------

namespace {

// Central difference of `f` along every coordinate of `at`. The divisor is
// the difference of the actually representable perturbed arguments.
template <typename F>
Eigen::MatrixXd central_difference(const F& f, const Eigen::VectorXd& at,
                                   Eigen::Index rows) {
  Eigen::MatrixXd J(rows, at.size());
  Eigen::VectorXd plus = at, minus = at;
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    const double h = 1e-6 * (1.0 + std::abs(at(i)));
    plus(i) = at(i) + h;
    minus(i) = at(i) - h;
    J.col(i) = (f(plus) - f(minus)) / (plus(i) - minus(i));
    plus(i) = minus(i) = at(i);
  }
  return J;
}

}  // namespace

void MechanicalSystem::acceleration_jacobians(const Eigen::VectorXd& q,
                                              const Eigen::VectorXd& qdot,
                                              const Eigen::VectorXd& u,
                                              Eigen::MatrixXd* dq,
                                              Eigen::MatrixXd* dv,
                                              Eigen::MatrixXd* du) const {
  const Eigen::Index nq = num_positions();
  if (dq) {
    *dq = central_difference(
        [&](const Eigen::VectorXd& p) { return acceleration(p, qdot, u); }, q,
        nq);
  }
  if (dv) {
    *dv = central_difference(
        [&](const Eigen::VectorXd& v) { return acceleration(q, v, u); }, qdot,
        nq);
  }
  if (du) {
    *du = central_difference(
        [&](const Eigen::VectorXd& w) { return acceleration(q, qdot, w); }, u,
        nq);
  }
}

Eigen::MatrixXd MechanicalSystem::acceleration_curvature(
    const Eigen::VectorXd& q, const Eigen::VectorXd& qdot,
    const Eigen::VectorXd& u, const Eigen::VectorXd& w) const {
  const Eigen::Index nq = q.size(), nu = u.size(), n = 2 * nq + nu;
  auto gradient = [&](const Eigen::VectorXd& p) {
    Eigen::MatrixXd dq, dv, du;
    acceleration_jacobians(p.head(nq), p.segment(nq, nq), p.tail(nu), &dq, &dv,
                           &du);
    Eigen::VectorXd g(n);
    g << dq.transpose() * w, dv.transpose() * w, du.transpose() * w;
    return g;
  };
  Eigen::VectorXd at(n);
  at << q, qdot, u;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd plus = at, minus = at;
  for (Eigen::Index i = 0; i < 2 * nq; ++i) {
    const double h = 1e-4 * (1.0 + std::abs(at(i)));
    plus(i) = at(i) + h;
    minus(i) = at(i) - h;
    H.col(i) = (gradient(plus) - gradient(minus)) / (plus(i) - minus(i));
    plus(i) = minus(i) = at(i);
  }
  // Columns of u come from the rows of u in the q and q̇ columns.
  H.topRightCorner(2 * nq, nu) = H.bottomLeftCorner(nu, 2 * nq).transpose();
  const Eigen::MatrixXd Hqv = H.topLeftCorner(2 * nq, 2 * nq);
  H.topLeftCorner(2 * nq, 2 * nq) = 0.5 * (Hqv + Hqv.transpose());
  return H;
}

Eigen::VectorXd MechanicalSystem::state_derivative(
    const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  const int nq = num_positions();
  require_dim(x.size(), 2 * nq, "state_derivative: x");
  require_dim(u.size(), num_inputs(), "state_derivative: u");
  Eigen::VectorXd xdot(2 * nq);
  xdot.head(nq) = x.tail(nq);
  xdot.tail(nq) = acceleration(x.head(nq), x.tail(nq), u);
  return xdot;
}

Eigen::VectorXd FloatingBaseSystem::acceleration(
    const Eigen::VectorXd& q, const Eigen::VectorXd& qdot,
    const Eigen::VectorXd& u) const {
  return forward_dynamics<double>(model_, q, qdot, u);
}

DoubleIntegrator::DoubleIntegrator(double mass, int dof)
    : mass_(mass), dof_(dof) {
  if (!(mass > 0)) throw ConfigError("DoubleIntegrator: mass must be positive");
  if (dof < 1) throw ConfigError("DoubleIntegrator: dof must be at least 1");
}

Eigen::VectorXd DoubleIntegrator::acceleration(const Eigen::VectorXd& q,
                                               const Eigen::VectorXd& qdot,
                                               const Eigen::VectorXd& u) const {
  require_dim(q.size(), dof_, "DoubleIntegrator: q");
  require_dim(qdot.size(), dof_, "DoubleIntegrator: qdot");
  require_dim(u.size(), dof_, "DoubleIntegrator: u");
  return u / mass_;
}

Eigen::MatrixXd DoubleIntegrator::acceleration_curvature(
    const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::VectorXd&,
    const Eigen::VectorXd&) const {
  return Eigen::MatrixXd::Zero(3 * dof_, 3 * dof_);
}

// ---------------------------------------------------------------------------

void linearize_at(const MechanicalSystem& system, const Eigen::VectorXd& x,
                  const Eigen::VectorXd& u, Eigen::MatrixXd* A,
                  Eigen::MatrixXd* B) {
  const Eigen::Index nx = system.num_states();
  *A = central_difference(
      [&](const Eigen::VectorXd& z) { return system.state_derivative(z, u); },
      x, nx);
  *B = central_difference(
      [&](const Eigen::VectorXd& w) { return system.state_derivative(x, w); },
      u, nx);
}

Linearization linearize(const MechanicalSystem& system,
                        const Trajectory& trajectory) {
  require_dim(trajectory.states.rows(), system.num_states(),
              "linearize: trajectory state dimension");
  require_dim(trajectory.inputs.rows(), system.num_inputs(),
              "linearize: trajectory input dimension");
  Linearization lin;
  const int knots = trajectory.num_knots();
  lin.times.resize(knots);
  lin.A.resize(knots);
  lin.B.resize(knots);
  for (int k = 0; k < knots; ++k) {
    lin.times[k] = trajectory.time(k);
    const int held = std::min(k, trajectory.num_intervals() - 1);
    linearize_at(system, trajectory.states.col(k), trajectory.inputs.col(held),
                 &lin.A[k], &lin.B[k]);
  }
  return lin;
}

}  // namespace tvroa
