#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tvroa/dynamics.hpp"
#include "tvroa/rng.hpp"
#include "tvroa/scenarios.hpp"
#include "tvroa/trajectory.hpp"

using namespace tvroa;

namespace {

MultibodyModel chaser() { return *detumble_scenario().model; }

Eigen::VectorXd random_vector(int n, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(MassMatrix, FreeflyerIsDiagonal) {
  const MultibodyModel model(4.26, 0.064);
  Rng rng = make_stream(1, Stream::kTesting);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::MatrixXd M = mass_matrix<double>(model, random_vector(3, rng, 3.0));
    const Eigen::Vector3d expected(4.26, 4.26, 0.064);
    EXPECT_EQ(M, Eigen::MatrixXd(expected.asDiagonal()));
  }
}

TEST(MassMatrix, MatchesKineticEnergyOracle) {
  const MultibodyModel model = chaser();
  Rng rng = make_stream(2, Stream::kTesting);
  for (int trial = 0; trial < 4; ++trial) {
    const Eigen::VectorXd q =
        trial == 0 ? Eigen::VectorXd::Zero(6) : random_vector(6, rng, 2.0);
    const Eigen::MatrixXd M = mass_matrix<double>(model, q);
    const Eigen::MatrixXd oracle = oracle::mass_matrix(model, q);
    EXPECT_LE(max_abs(M - oracle), 1e-6 * max_abs(oracle)) << "q = " << q.transpose();
  }
}

TEST(MassMatrix, SymmetricPositiveDefinite) {
  const MultibodyModel model = chaser();
  Rng rng = make_stream(3, Stream::kTesting);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::MatrixXd M = mass_matrix<double>(model, random_vector(6, rng, M_PI));
    ASSERT_LE(max_abs(M - M.transpose()), 1e-12);
    ASSERT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(M).eigenvalues().minCoeff(), 0);
  }
}

TEST(MassMatrix, RejectsWrongDimension) {
  EXPECT_THROW(mass_matrix<double>(chaser(), Eigen::VectorXd::Zero(5)), InputError);
}

TEST(Model, RejectsNonPositiveMass) {
  EXPECT_THROW(MultibodyModel(0.0, 1.0), ConfigError);
  EXPECT_THROW(MultibodyModel(1.0, -1.0), ConfigError);
}

TEST(BiasForces, VanishAtRestAndForSingleBody) {
  Rng rng = make_stream(4, Stream::kTesting);
  EXPECT_EQ(bias_forces<double>(chaser(), random_vector(6, rng), Eigen::VectorXd::Zero(6)),
            Eigen::VectorXd::Zero(6));
  const MultibodyModel freeflyer(4.26, 0.064);
  EXPECT_LE(bias_forces<double>(freeflyer, random_vector(3, rng), random_vector(3, rng))
                .cwiseAbs()
                .maxCoeff(),
            1e-15);
}

TEST(BiasForces, MatchLagrangianIdentity) {
  // C = Ṁq̇ − ∇_q(½q̇ᵀMq̇), both terms by central differences of M.
  const MultibodyModel model = chaser();
  Rng rng = make_stream(5, Stream::kTesting);
  const double h = 1e-5;
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::VectorXd q = random_vector(6, rng, 2.0);
    const Eigen::VectorXd v = random_vector(6, rng, 0.5);
    const Eigen::MatrixXd Mdot =
        (mass_matrix<double>(model, q + h * v) - mass_matrix<double>(model, q - h * v)) /
        (2 * h);
    Eigen::VectorXd grad(6);
    for (int i = 0; i < 6; ++i) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(6);
      e(i) = h;
      grad(i) = 0.5 * v.dot((mass_matrix<double>(model, q + e) -
                             mass_matrix<double>(model, q - e)) * v) / (2 * h);
    }
    const Eigen::VectorXd oracle = Mdot * v - grad;
    const Eigen::VectorXd C = bias_forces<double>(model, q, v);
    EXPECT_LE((C - oracle).cwiseAbs().maxCoeff(), 1e-6 * (1 + oracle.cwiseAbs().maxCoeff()));
  }
}

TEST(ForwardDynamics, FreeflyerUnitForce) {
  const MultibodyModel freeflyer(4.26, 0.064);
  const Eigen::VectorXd a = forward_dynamics<double>(
      freeflyer, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3), Eigen::Vector3d(1, 0, 0));
  EXPECT_NEAR(a(0), 1 / 4.26, 1e-15);
  EXPECT_EQ(a(1), 0);
  EXPECT_EQ(a(2), 0);
}

TEST(ForwardDynamics, MatchesDenseSolveAndResidual) {
  const MultibodyModel model = chaser();
  Rng rng = make_stream(6, Stream::kTesting);
  EXPECT_EQ(forward_dynamics<double>(model, random_vector(6, rng), Eigen::VectorXd::Zero(6),
                                     Eigen::VectorXd::Zero(6)),
            Eigen::VectorXd::Zero(6));
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd q = random_vector(6, rng, 2.0);
    const Eigen::VectorXd v = random_vector(6, rng);
    const Eigen::VectorXd u = random_vector(6, rng, 50.0);
    const Eigen::VectorXd a = forward_dynamics<double>(model, q, v, u);
    const Eigen::MatrixXd M = mass_matrix<double>(model, q);
    const Eigen::VectorXd C = bias_forces<double>(model, q, v);
    EXPECT_LE((M * a + C - u).norm(), 1e-10 * (1 + u.norm()));
    const Eigen::VectorXd oracle = M.fullPivLu().solve(u - C);
    EXPECT_LE((a - oracle).norm(), 1e-10 * (1 + oracle.norm()));
  }
}

TEST(Momentum, MatchesPerBodyOracle) {
  const MultibodyModel model = chaser();
  Rng rng = make_stream(7, Stream::kTesting);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::VectorXd q = random_vector(6, rng, 2.0);
    const Eigen::VectorXd v = random_vector(6, rng);
    const Momentum m = momentum(model, q, v);
    const auto [L, P] = oracle::momentum(model, q, v);
    EXPECT_NEAR(m.angular, L, 1e-6 * (1 + std::abs(L)));
    EXPECT_LE((m.linear - P).norm(), 1e-6 * (1 + P.norm()));
  }
}

TEST(Momentum, FreeflyerSpin) {
  const MultibodyModel freeflyer(4.26, 0.064);
  const Momentum rest = momentum(freeflyer, Eigen::Vector3d(1, 2, 3), Eigen::Vector3d::Zero());
  EXPECT_EQ(rest.angular, 0);
  EXPECT_EQ(rest.linear, Eigen::Vector2d::Zero());
  const Momentum spin =
      momentum(freeflyer, Eigen::Vector3d::Zero(), Eigen::Vector3d(0, 0, 0.7));
  EXPECT_NEAR(spin.angular, 0.064 * 0.7, 1e-15);
}

TEST(Momentum, ConservedUnderZeroInput) {
  const Scenario s = detumble_scenario();
  const MechanicalSystem& system = *s.system;
  Eigen::VectorXd x(12);
  x << s.bounds.q0, s.bounds.v0;
  x.tail(6) += Eigen::VectorXd::LinSpaced(6, 0.05, -0.1);
  const Eigen::VectorXd u = Eigen::VectorXd::Zero(6);
  const auto f = [&](const Eigen::VectorXd& y) { return system.state_derivative(y, u); };
  const Momentum m0 = momentum(*s.model, x.head(6), x.tail(6));
  const double E0 = kinetic_energy(*s.model, x.head(6), x.tail(6));
  for (int step = 0; step < 10000; ++step) x = rk4_step(f, x, 1e-3);
  const Momentum m1 = momentum(*s.model, x.head(6), x.tail(6));
  const double scale_L = std::abs(m0.angular);
  const double scale_P = m0.linear.norm();
  ASSERT_GT(scale_L, 1);
  ASSERT_GT(scale_P, 1);
  EXPECT_LE(std::abs(m1.angular - m0.angular), 1e-6 * scale_L);
  EXPECT_LE((m1.linear - m0.linear).norm(), 1e-6 * scale_P);
  EXPECT_NEAR(kinetic_energy(*s.model, x.head(6), x.tail(6)), E0, 1e-6 * E0);
}

TEST(Energy, IncrementEqualsWork) {
  // Over each step ΔT = ∫q̇ᵀu dt; the work integral by Simpson's rule with the
  // midpoint state from a half step.
  const Scenario s = detumble_scenario();
  const MechanicalSystem& system = *s.system;
  Rng rng = make_stream(8, Stream::kTesting);
  Eigen::VectorXd x(12);
  x << s.bounds.q0, s.bounds.v0;
  const Eigen::VectorXd u = random_vector(6, rng, 10.0);
  const auto f = [&](const Eigen::VectorXd& y) { return system.state_derivative(y, u); };
  const double dt = 1e-3;
  double worst = 0;
  for (int step = 0; step < 500; ++step) {
    const Eigen::VectorXd mid = rk4_step(f, x, dt / 2);
    const Eigen::VectorXd next = rk4_step(f, x, dt);
    const double work =
        dt / 6 * (x.tail(6).dot(u) + 4 * mid.tail(6).dot(u) + next.tail(6).dot(u));
    const double dT = kinetic_energy(*s.model, next.head(6), next.tail(6)) -
                      kinetic_energy(*s.model, x.head(6), x.tail(6));
    worst = std::max(worst, std::abs(dT - work) / std::abs(work));
    x = next;
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(Linearization, DoubleIntegratorIsExact) {
  const DoubleIntegrator system(2.0, 3);
  Trajectory t;
  t.dt = 0.1;
  t.states = Eigen::MatrixXd::Random(6, 5);
  t.inputs = Eigen::MatrixXd::Random(3, 4);
  const Linearization lin = linearize(system, t);
  ASSERT_EQ(lin.num_knots(), 5);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(6, 6);
  A.topRightCorner(3, 3).setIdentity();
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(6, 3);
  B.bottomRows(3) = 0.5 * Eigen::MatrixXd::Identity(3, 3);
  for (int k = 0; k < 5; ++k) {
    EXPECT_LE(max_abs(lin.A[k] - A), 1e-9);
    EXPECT_LE(max_abs(lin.B[k] - B), 1e-9);
  }
}

TEST(Linearization, FreeflyerInputMatrixConstant) {
  const FloatingBaseSystem system(MultibodyModel(4.26, 0.064));
  Trajectory t;
  t.dt = 0.1;
  t.states = Eigen::MatrixXd::Random(6, 4) * 3;
  t.inputs = Eigen::MatrixXd::Random(3, 3);
  const Linearization lin = linearize(system, t);
  for (int k = 1; k < 4; ++k) EXPECT_LE(max_abs(lin.B[k] - lin.B[0]), 1e-9);
}

TEST(Linearization, TaylorRemainderIsSecondOrder) {
  const Scenario s = detumble_scenario();
  const MechanicalSystem& system = *s.system;
  Rng rng = make_stream(9, Stream::kTesting);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd x(12);
    x << random_vector(6, rng, 2.0), random_vector(6, rng, 0.3);
    const Eigen::VectorXd u = random_vector(6, rng, 10.0);
    Eigen::MatrixXd A, B;
    linearize_at(system, x, u, &A, &B);
    const Eigen::VectorXd dx = random_vector(12, rng).normalized();
    const Eigen::VectorXd du = random_vector(6, rng).normalized();
    const Eigen::VectorXd f0 = system.state_derivative(x, u);
    double previous = 0;
    for (double h : {1e-2, 5e-3, 2.5e-3}) {
      const double r =
          (system.state_derivative(x + h * dx, u + h * du) - f0 - h * (A * dx + B * du)).norm();
      if (previous > 0) EXPECT_GE(std::log2(previous / r), 1.9);
      previous = r;
    }
  }
}

TEST(Curvature, MatchesJacobianDifferences) {
  const Scenario s = detumble_scenario();
  const MechanicalSystem& system = *s.system;
  Rng rng = make_stream(10, Stream::kTesting);
  const Eigen::VectorXd q = random_vector(6, rng, 2.0);
  const Eigen::VectorXd v = random_vector(6, rng, 0.3);
  const Eigen::VectorXd u = random_vector(6, rng, 10.0);
  const Eigen::VectorXd w = random_vector(6, rng);
  const Eigen::MatrixXd H = system.acceleration_curvature(q, v, u, w);
  ASSERT_EQ(H.rows(), 18);
  EXPECT_LE(max_abs(H - H.transpose()), 1e-12);
  // Column j of H is the derivative of the gradient of wᵀq̈ along variable j.
  const auto gradient = [&](const Eigen::VectorXd& z) {
    Eigen::MatrixXd dq, dv, du;
    system.acceleration_jacobians(z.head(6), z.segment(6, 6), z.tail(6), &dq, &dv, &du);
    Eigen::VectorXd g(18);
    g << dq.transpose() * w, dv.transpose() * w, du.transpose() * w;
    return g;
  };
  Eigen::VectorXd z(18);
  z << q, v, u;
  const double h = 1e-4;
  for (int j = 0; j < 12; ++j) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(18);
    e(j) = h;
    const Eigen::VectorXd column = (gradient(z + e) - gradient(z - e)) / (2 * h);
    EXPECT_LE((H.col(j) - column).cwiseAbs().maxCoeff(), 1e-4 * (1 + column.cwiseAbs().maxCoeff()));
  }
}

TEST(Integrator, Rk4IsFourthOrder) {
  const Scenario s = detumble_scenario();
  const MechanicalSystem& system = *s.system;
  Eigen::VectorXd x0(12);
  x0 << s.bounds.q0, s.bounds.v0;
  x0.tail(6) += Eigen::VectorXd::Constant(6, 0.3);
  const Eigen::VectorXd u = Eigen::VectorXd::LinSpaced(6, 5, -5);
  const auto f = [&](const Eigen::VectorXd& y) { return system.state_derivative(y, u); };
  const auto integrate = [&](double dt) {
    Eigen::VectorXd x = x0;
    const int steps = static_cast<int>(std::round(2.0 / dt));
    for (int i = 0; i < steps; ++i) x = rk4_step(f, x, dt);
    return x;
  };
  const double dt = 0.1;
  const Eigen::VectorXd reference = integrate(dt / 8);
  const double coarse = (integrate(dt) - reference).norm();
  const double fine = (integrate(dt / 2) - reference).norm();
  EXPECT_GT(coarse, 1e-10);
  EXPECT_GE(coarse / fine, 8.0);
}
