#pragma once

// Planar floating-base multibody dynamics.
//
// Generalized coordinates q = (x, y, θ, q₁ … qₙ): base center-of-mass
// position in the inertial frame, base attitude, and n revolute joint angles
// (relative). Generalized forces u = (f_x, f_y, τ_z, τ₁ … τₙ) with base forces
// expressed in the inertial frame and applied at the base center of mass.
//
//   M(q) q̈ + C(q, q̇) = u
//
// There is no gravity; the base is free floating.

#include <cmath>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "tvroa/common.hpp"

namespace tvroa {

struct Link {
  double mass = 0;        // kg
  double inertia = 0;     // kg·m², about the link center of mass
  double length = 0;      // m, joint-to-joint
  double com_offset = 0;  // m, from the proximal joint along the link
};

/// Body rigidly welded to the last link, e.g. a captured target.
struct Payload {
  double mass = 0;        // kg
  double inertia = 0;     // kg·m², about the payload center of mass
  double com_offset = 0;  // m, from the last joint along the last link
};

class MultibodyModel {
 public:
  /// A single rigid body: the base alone.
  MultibodyModel(double base_mass, double base_inertia);

  /// `mount` is the first joint location in the base frame.
  MultibodyModel(double base_mass, double base_inertia, Eigen::Vector2d mount,
                 std::vector<Link> links,
                 std::optional<Payload> payload = std::nullopt);

  int num_joints() const { return static_cast<int>(links_.size()); }
  int num_positions() const { return 3 + num_joints(); }
  int num_states() const { return 2 * num_positions(); }

  double base_mass() const { return base_mass_; }
  double base_inertia() const { return base_inertia_; }
  const Eigen::Vector2d& mount() const { return mount_; }
  const std::vector<Link>& links() const { return links_; }
  const std::optional<Payload>& payload() const { return payload_; }

  /// Links as simulated: the payload, if any, folded into the last link.
  const std::vector<Link>& bodies() const { return bodies_; }

  double total_mass() const;

 private:
  double base_mass_;
  double base_inertia_;
  Eigen::Vector2d mount_;
  std::vector<Link> links_;
  std::optional<Payload> payload_;
  std::vector<Link> bodies_;
};

/// Composite body obtained by welding `payload` to `link`.
Link fold_payload(const Link& link, const Payload& payload);

namespace detail {

template <typename Scalar>
Vector2<Scalar> unit(const Scalar& angle) {
  using std::cos;
  using std::sin;
  return Vector2<Scalar>(cos(angle), sin(angle));
}

template <typename Scalar>
Vector2<Scalar> perp(const Vector2<Scalar>& v) {
  return Vector2<Scalar>(-v.y(), v.x());
}

template <typename Scalar>
Vector2<Scalar> rotate(const Scalar& angle, const Eigen::Vector2d& v) {
  using std::cos;
  using std::sin;
  const Scalar c = cos(angle), s = sin(angle);
  return Vector2<Scalar>(c * v.x() - s * v.y(), s * v.x() + c * v.y());
}

}  // namespace detail

/// Inertial-frame kinematics of every body of the chain.
template <typename Scalar>
struct ChainKinematics {
  Vector2<Scalar> base;
  std::vector<Vector2<Scalar>> joint;  // joint i location, i = 0 … n-1
  std::vector<Vector2<Scalar>> com;    // link i center of mass
  std::vector<Scalar> angle;           // link i absolute angle
};

template <typename Scalar>
ChainKinematics<Scalar> chain_kinematics(const MultibodyModel& model,
                                         const VectorX<Scalar>& q) {
  require_dim(q.size(), model.num_positions(), "chain_kinematics: q");
  const int n = model.num_joints();
  ChainKinematics<Scalar> kin;
  kin.base = q.template head<2>();
  kin.joint.resize(n);
  kin.com.resize(n);
  kin.angle.resize(n);
  Vector2<Scalar> joint = kin.base + detail::rotate<Scalar>(q(2), model.mount());
  Scalar angle = q(2);
  for (int i = 0; i < n; ++i) {
    const Link& body = model.bodies()[i];
    angle += q(3 + i);
    kin.joint[i] = joint;
    kin.angle[i] = angle;
    kin.com[i] = joint + Scalar(body.com_offset) * detail::unit(angle);
    joint += Scalar(body.length) * detail::unit(angle);
  }
  return kin;
}

/// Translational Jacobian of the center of mass of link `i` (2 × (3+n)).
template <typename Scalar>
MatrixX<Scalar> com_jacobian(const MultibodyModel& model,
                             const ChainKinematics<Scalar>& kin, int i) {
  const int nq = model.num_positions();
  MatrixX<Scalar> J = MatrixX<Scalar>::Zero(2, nq);
  J(0, 0) = Scalar(1);
  J(1, 1) = Scalar(1);
  J.col(2) = detail::perp<Scalar>(kin.com[i] - kin.base);
  for (int j = 0; j <= i; ++j) {
    J.col(3 + j) = detail::perp<Scalar>(kin.com[i] - kin.joint[j]);
  }
  return J;
}

/// Generalized mass matrix M(q), assembled as Σ mᵢ JᵢᵀJᵢ + Iᵢ ωᵢᵀωᵢ over the
/// base and every link. Symmetric positive definite; independent of the base
/// position (x, y).
template <typename Scalar>
MatrixX<Scalar> mass_matrix(const MultibodyModel& model,
                            const VectorX<Scalar>& q) {
  require_dim(q.size(), model.num_positions(), "mass_matrix: q");
  const int nq = model.num_positions();
  const auto kin = chain_kinematics<Scalar>(model, q);
  MatrixX<Scalar> M = MatrixX<Scalar>::Zero(nq, nq);
  M(0, 0) += Scalar(model.base_mass());
  M(1, 1) += Scalar(model.base_mass());
  M(2, 2) += Scalar(model.base_inertia());
  for (int i = 0; i < model.num_joints(); ++i) {
    const Link& body = model.bodies()[i];
    const MatrixX<Scalar> J = com_jacobian<Scalar>(model, kin, i);
    M.noalias() += Scalar(body.mass) * J.transpose() * J;
    // Angular velocity of link i is θ̇ + q̇₁ + … + q̇ᵢ.
    const int last = 3 + i;
    M.block(2, 2, last - 1, last - 1).array() += Scalar(body.inertia);
  }
  return M;
}

/// Coriolis and centrifugal effort C(q, q̇). Computed as Σ mᵢ Jᵢᵀ (J̇ᵢ q̇),
/// the velocity-product part of each center-of-mass acceleration projected
/// onto the generalized coordinates. Planar angular Jacobians are constant,
/// so rotational terms contribute nothing.
template <typename Scalar>
VectorX<Scalar> bias_forces(const MultibodyModel& model,
                            const VectorX<Scalar>& q,
                            const VectorX<Scalar>& qdot) {
  require_dim(q.size(), model.num_positions(), "bias_forces: q");
  require_dim(qdot.size(), model.num_positions(), "bias_forces: qdot");
  const int n = model.num_joints();
  const auto kin = chain_kinematics<Scalar>(model, q);
  VectorX<Scalar> C = VectorX<Scalar>::Zero(model.num_positions());

  std::vector<Scalar> rate(n);
  Scalar w = qdot(2);
  for (int i = 0; i < n; ++i) {
    w += qdot(3 + i);
    rate[i] = w;
  }
  // Centripetal acceleration of the current joint location.
  Vector2<Scalar> joint_acc =
      -qdot(2) * qdot(2) * detail::rotate<Scalar>(q(2), model.mount());
  for (int i = 0; i < n; ++i) {
    const Link& body = model.bodies()[i];
    const Vector2<Scalar> e = detail::unit(kin.angle[i]);
    const Vector2<Scalar> com_acc =
        joint_acc - Scalar(body.com_offset) * rate[i] * rate[i] * e;
    C.noalias() += Scalar(body.mass) *
                   com_jacobian<Scalar>(model, kin, i).transpose() * com_acc;
    joint_acc -= Scalar(body.length) * rate[i] * rate[i] * e;
  }
  return C;
}

/// q̈ = M(q)⁻¹ (u − C(q, q̇)).
template <typename Scalar>
VectorX<Scalar> forward_dynamics(const MultibodyModel& model,
                                 const VectorX<Scalar>& q,
                                 const VectorX<Scalar>& qdot,
                                 const VectorX<Scalar>& u) {
  require_dim(u.size(), model.num_positions(), "forward_dynamics: u");
  const MatrixX<Scalar> M = mass_matrix<Scalar>(model, q);
  const Eigen::LLT<MatrixX<Scalar>> llt(M);
  if (llt.info() != Eigen::Success) {
    const Eigen::JacobiSVD<MatrixX<Scalar>> svd(M);
    const auto& s = svd.singularValues();
    throw NumericalError(
        "forward_dynamics: mass matrix not positive definite (condition "
        "number " +
        std::to_string(static_cast<double>(s(0) / s(s.size() - 1))) + ")");
  }
  return llt.solve(u - bias_forces<Scalar>(model, q, qdot));
}

struct Momentum {
  double angular = 0;                           // N·m·s, about the origin
  Eigen::Vector2d linear = Eigen::Vector2d::Zero();  // N·s
};

/// Total momentum from the base rows of M q̇: the first two rows are the
/// linear momentum P, the θ row is the angular momentum about the moving
/// base point, shifted here to the inertial origin so that it is conserved.
Momentum momentum(const MultibodyModel& model, const Eigen::VectorXd& q,
                  const Eigen::VectorXd& qdot);

/// ½ q̇ᵀ M(q) q̇.
double kinetic_energy(const MultibodyModel& model, const Eigen::VectorXd& q,
                      const Eigen::VectorXd& qdot);

/// Center of mass of the whole assembly.
Eigen::Vector2d center_of_mass(const MultibodyModel& model,
                               const Eigen::VectorXd& q);

// ---------------------------------------------------------------------------

/// Second-order system with state x = (q, q̇) and input u. Implementations
/// are immutable and safe to share between threads.
class MechanicalSystem {
 public:
  virtual ~MechanicalSystem() = default;

  virtual int num_positions() const = 0;
  virtual int num_inputs() const = 0;
  int num_states() const { return 2 * num_positions(); }

  virtual Eigen::VectorXd acceleration(const Eigen::VectorXd& q,
                                       const Eigen::VectorXd& qdot,
                                       const Eigen::VectorXd& u) const = 0;

  /// ∂q̈/∂q, ∂q̈/∂q̇, ∂q̈/∂u. Default: central differences.
  virtual void acceleration_jacobians(const Eigen::VectorXd& q,
                                      const Eigen::VectorXd& qdot,
                                      const Eigen::VectorXd& u,
                                      Eigen::MatrixXd* dq, Eigen::MatrixXd* dv,
                                      Eigen::MatrixXd* du) const;

  /// Hessian of wᵀq̈ with respect to (q, q̇, u). Default: central differences
  /// of the gradient, with the u–u block zero since q̈ is affine in u.
  virtual Eigen::MatrixXd acceleration_curvature(const Eigen::VectorXd& q,
                                                 const Eigen::VectorXd& qdot,
                                                 const Eigen::VectorXd& u,
                                                 const Eigen::VectorXd& w) const;

  /// ẋ = (q̇, q̈).
  Eigen::VectorXd state_derivative(const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& u) const;
};

class FloatingBaseSystem final : public MechanicalSystem {
 public:
  explicit FloatingBaseSystem(MultibodyModel model) : model_(std::move(model)) {}

  const MultibodyModel& model() const { return model_; }
  int num_positions() const override { return model_.num_positions(); }
  int num_inputs() const override { return model_.num_positions(); }

  Eigen::VectorXd acceleration(const Eigen::VectorXd& q,
                               const Eigen::VectorXd& qdot,
                               const Eigen::VectorXd& u) const override;

 private:
  MultibodyModel model_;
};

/// Point masses on independent axes: q̈ = u / m.
class DoubleIntegrator final : public MechanicalSystem {
 public:
  explicit DoubleIntegrator(double mass = 1.0, int dof = 1);

  int num_positions() const override { return dof_; }
  int num_inputs() const override { return dof_; }
  double mass() const { return mass_; }

  Eigen::VectorXd acceleration(const Eigen::VectorXd& q,
                               const Eigen::VectorXd& qdot,
                               const Eigen::VectorXd& u) const override;
  Eigen::MatrixXd acceleration_curvature(const Eigen::VectorXd& q,
                                         const Eigen::VectorXd& qdot,
                                         const Eigen::VectorXd& u,
                                         const Eigen::VectorXd& w) const override;

 private:
  double mass_;
  int dof_;
};

// ---------------------------------------------------------------------------

struct Trajectory;

/// Per-knot Jacobians of the state derivative along a trajectory.
struct Linearization {
  std::vector<double> times;
  std::vector<Eigen::MatrixXd> A;
  std::vector<Eigen::MatrixXd> B;

  int num_knots() const { return static_cast<int>(times.size()); }
};

/// Central-difference Jacobians of f(x, u) at (x, u), step 1e-6·(1+|·|).
void linearize_at(const MechanicalSystem& system, const Eigen::VectorXd& x,
                  const Eigen::VectorXd& u, Eigen::MatrixXd* A,
                  Eigen::MatrixXd* B);

/// A_k, B_k at every knot. The final knot, which has no control of its own, is
/// linearized with the last held input (left limit of the final interval).
Linearization linearize(const MechanicalSystem& system,
                        const Trajectory& trajectory);

/// One classical Runge–Kutta step of ẋ = f(x).
template <typename Vector, typename F>
Vector rk4_step(const F& f, const Vector& x, double dt) {
  const Vector k1 = f(x);
  const Vector k2 = f(x + 0.5 * dt * k1);
  const Vector k3 = f(x + 0.5 * dt * k2);
  const Vector k4 = f(x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace tvroa
