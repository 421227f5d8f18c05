#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "tvroa/rng.hpp"
#include "tvroa/scenarios.hpp"
#include "tvroa/sim.hpp"

using namespace tvroa;

namespace {

struct DiPipeline {
  Scenario scenario = double_integrator_scenario();
  TvlqrPolicy policy;
  double rho_f = 0;
  DiPipeline() {
    policy = synthesize(scenario, reference_trajectory(scenario, optimize(scenario).trajectory));
    rho_f = rho_final(policy, scenario.estimation.goal_deviation);
  }
};

const DiPipeline& di() {
  static const DiPipeline pipeline;
  return pipeline;
}

}  // namespace

TEST(ConditionInput, DeadbandThenSaturation) {
  RolloutConfig config;
  config.deadband = Eigen::Vector3d(0.1, 0.1, 0.5);
  config.u_min = Eigen::Vector3d::Constant(-1);
  config.u_max = Eigen::Vector3d::Constant(1);
  Eigen::VectorXd u = Eigen::Vector3d(0.05, -3, 0.4);
  EXPECT_TRUE(condition_input(config, &u));
  EXPECT_EQ(u, Eigen::VectorXd(Eigen::Vector3d(0, -1, 0)));
  u = Eigen::Vector3d(0.1, -0.2, 0.9);
  EXPECT_FALSE(condition_input(config, &u));
  EXPECT_EQ(u, Eigen::VectorXd(Eigen::Vector3d(0.1, -0.2, 0.9)));
}

TEST(ConditionInput, EmptyStagesPassThrough) {
  const RolloutConfig config;
  Eigen::VectorXd u = Eigen::Vector2d(1e6, -1e-9);
  EXPECT_FALSE(condition_input(config, &u));
  EXPECT_EQ(u, Eigen::VectorXd(Eigen::Vector2d(1e6, -1e-9)));
}

TEST(NominalFuel, RectangleArea) {
  Trajectory t;
  t.dt = 0.5;
  t.states = Eigen::MatrixXd::Zero(6, 5);
  t.inputs = Eigen::MatrixXd::Zero(3, 4);
  EXPECT_EQ(nominal_fuel(t), 0);
  t.inputs.row(0).setOnes();
  EXPECT_DOUBLE_EQ(nominal_fuel(t), 2.0);
  t.inputs.row(2).setConstant(-0.25);
  EXPECT_DOUBLE_EQ(nominal_fuel(t), 2.5);
}

TEST(Rollout, NominalIsReproduced) {
  const DiPipeline& d = di();
  RolloutConfig config = rollout_config(d.scenario);
  const double F0 = nominal_fuel(d.policy.nominal);
  config.fuel = FuelBudget{F0, 0.0};
  const RolloutResult r =
      rollout(*d.scenario.system, d.policy, d.policy.nominal.states.col(0), config);
  ASSERT_TRUE(r.completed()) << to_string(r.termination);
  ASSERT_EQ(r.knots_reached(), d.policy.num_knots());
  for (double J : r.cost_to_go) EXPECT_LE(J, 1e-8 * d.rho_f);
  EXPECT_NEAR(r.fuel.back(), F0, 0.01 * F0);
}

TEST(Rollout, FuelMonotoneAndBreachAtFirstExcess) {
  const DiPipeline& d = di();
  RolloutConfig config = rollout_config(d.scenario);
  Eigen::VectorXd x0 = d.policy.nominal.states.col(0);
  x0(0) -= 0.3;  // farther from the goal, so more fuel than nominal
  const RolloutResult free = rollout(*d.scenario.system, d.policy, x0, config);
  ASSERT_TRUE(free.completed());
  for (std::size_t k = 1; k < free.fuel.size(); ++k) EXPECT_GE(free.fuel[k], free.fuel[k - 1]);
  for (double J : free.cost_to_go) EXPECT_GE(J, 0);

  const double F0 = nominal_fuel(d.policy.nominal);
  ASSERT_GT(free.fuel.back(), F0);
  config.fuel = FuelBudget{F0, 0.0};
  const RolloutResult limited = rollout(*d.scenario.system, d.policy, x0, config);
  ASSERT_EQ(limited.termination, Termination::kFuelExceeded);
  const int k = limited.breach_knot;
  ASSERT_GT(k, 0);
  // The same trajectory up to the breach, and the breach is the first knot
  // past the budget.
  EXPECT_GT(free.fuel[k], F0);
  EXPECT_LE(free.fuel[k - 1], F0);
  for (int i = 0; i < limited.knots_reached(); ++i) {
    EXPECT_EQ(limited.cost_to_go[i], free.cost_to_go[i]);
  }
}

TEST(Rollout, CostLimitsOnlyStopEarly) {
  const DiPipeline& d = di();
  RolloutConfig config = rollout_config(d.scenario);
  Eigen::VectorXd x0 = d.policy.nominal.states.col(0);
  x0(1) += 0.4;
  const RolloutResult free = rollout(*d.scenario.system, d.policy, x0, config);
  config.cost_limits.assign(d.policy.num_knots(), kInf);
  config.cost_limits[10] = 0.5 * free.cost_to_go[10];
  const RolloutResult stopped = rollout(*d.scenario.system, d.policy, x0, config);
  EXPECT_EQ(stopped.termination, Termination::kCostExceeded);
  EXPECT_EQ(stopped.breach_knot, 10);
  for (int i = 0; i < stopped.knots_reached(); ++i) {
    EXPECT_EQ(stopped.cost_to_go[i], free.cost_to_go[i]);
  }
}

TEST(Rollout, DivergenceIsReported) {
  const DiPipeline& d = di();
  RolloutConfig config = rollout_config(d.scenario);
  config.divergence_limit = 0.5;
  Eigen::VectorXd x0 = d.policy.nominal.states.col(0);
  x0(0) += 5;
  const RolloutResult r = rollout(*d.scenario.system, d.policy, x0, config);
  EXPECT_EQ(r.termination, Termination::kDiverged);
  EXPECT_GE(r.breach_knot, 0);
}

TEST(Rollout, Deterministic) {
  const DiPipeline& d = di();
  Eigen::VectorXd x0 = d.policy.nominal.states.col(0) + Eigen::Vector2d(0.2, -0.1);
  const RolloutConfig config = rollout_config(d.scenario, true);
  const RolloutResult a = rollout(*d.scenario.system, d.policy, x0, config);
  const RolloutResult b = rollout(*d.scenario.system, d.policy, x0, config);
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.cost_to_go, b.cost_to_go);
  EXPECT_EQ(a.fuel, b.fuel);
  EXPECT_EQ(a.final_state, b.final_state);
}

TEST(Rollout, RejectsWrongDimension) {
  const DiPipeline& d = di();
  EXPECT_THROW(rollout(*d.scenario.system, d.policy, Eigen::VectorXd::Zero(3),
                       rollout_config(d.scenario)),
               InputError);
}

TEST(Rollout, CsvTrace) {
  const DiPipeline& d = di();
  const RolloutResult r = rollout(*d.scenario.system, d.policy, d.policy.nominal.states.col(0),
                                  rollout_config(d.scenario));
  const auto path = std::filesystem::temp_directory_path() / "tvroa_rollout.csv";
  write_rollout_csv(r, d.policy.nominal.dt, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "t,x0,x1,u0,J,F");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, r.knots_reached());
  std::filesystem::remove(path);
}

TEST(Momentum, ArmTorquesKeepLinearMomentum) {
  // With zero base forces the only external wrench is the base torque, which
  // cannot change P.
  const Scenario s = detumble_scenario();
  const MechanicalSystem& system = *s.system;
  Eigen::VectorXd x(12);
  x << s.bounds.q0, s.bounds.v0;
  x(6) += 0.05;
  const Momentum m0 = momentum(*s.model, x.head(6), x.tail(6));
  const double dt = 1e-3;
  for (int step = 0; step < 5000; ++step) {
    const double t = step * dt;
    Eigen::VectorXd u = Eigen::VectorXd::Zero(6);
    u.tail(3) << 20 * std::sin(t), -10 * std::cos(2 * t), 5;
    u(2) = 3;
    x = rk4_step([&](const Eigen::VectorXd& y) { return system.state_derivative(y, u); }, x, dt);
  }
  const Momentum m1 = momentum(*s.model, x.head(6), x.tail(6));
  EXPECT_LE((m1.linear - m0.linear).norm(), 1e-6 * m0.linear.norm());
}
