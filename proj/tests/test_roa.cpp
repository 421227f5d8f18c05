#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "tvroa/funnel.hpp"
#include "tvroa/rng.hpp"
#include "tvroa/roa.hpp"
#include "tvroa/scenarios.hpp"

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
  EstimationConfig config(int sims, std::uint64_t seed) const {
    EstimationConfig c = scenario.estimation;
    c.num_simulations = sims;
    c.seed = seed;
    c.check_outlet = false;
    return c;
  }
};

const DiPipeline& di() {
  static const DiPipeline pipeline;
  return pipeline;
}

}  // namespace

TEST(SampleUnitSphere, OneDimensionalIsUniform) {
  // Kolmogorov–Smirnov against U(−1, 1); 1.628/√n is the 1% critical value.
  Rng rng = make_stream(20, Stream::kTesting);
  const int n = 100000;
  std::vector<double> y(n);
  for (double& v : y) v = sample_unit_sphere(1, rng)(0);
  std::sort(y.begin(), y.end());
  double D = 0;
  for (int i = 0; i < n; ++i) {
    const double F = (y[i] + 1) / 2;
    D = std::max({D, (i + 1.0) / n - F, F - double(i) / n});
  }
  EXPECT_LT(D, 1.628 / std::sqrt(double(n)));
  EXPECT_GE(y.front(), -1);
  EXPECT_LE(y.back(), 1);
}

TEST(SampleUnitSphere, VolumeFractionOfInnerBall) {
  Rng rng = make_stream(21, Stream::kTesting);
  const int n = 100000;
  int inner = 0;
  for (int i = 0; i < n; ++i) inner += sample_unit_sphere(3, rng).norm() <= 0.5;
  EXPECT_NEAR(double(inner) / n, 0.125, 0.01);
}

TEST(SampleUnitSphere, NeverLeavesTheBall) {
  Rng rng = make_stream(22, Stream::kTesting);
  for (int dim : {1, 2, 6, 12}) {
    for (int i = 0; i < 2000; ++i) ASSERT_LE(sample_unit_sphere(dim, rng).norm(), 1.0);
  }
  for (int i = 0; i < 100; ++i) EXPECT_NEAR(sample_sphere_surface(5, rng).norm(), 1.0, 1e-12);
}

TEST(EllipsoidSampler, ScaledIdentityIsTranslation) {
  const Eigen::Vector3d c(1, -2, 3);
  const EllipsoidSampler sampler(c, 4.0 * Eigen::Matrix3d::Identity(), 4.0);
  const Eigen::Vector3d y(0.3, -0.2, 0.5);
  EXPECT_LE((sampler.map(y) - (c + y)).norm(), 1e-14);
}

TEST(EllipsoidSampler, AxisLengthsAndMembership) {
  const EllipsoidSampler sampler(Eigen::Vector2d::Zero(), Eigen::Vector2d(4, 1).asDiagonal(), 1.0);
  Rng rng = make_stream(23, Stream::kTesting);
  double max_x = 0, max_y = 0;
  for (int i = 0; i < 100000; ++i) {
    const Eigen::VectorXd x = sampler.sample(rng);
    ASSERT_LE(4 * x(0) * x(0) + x(1) * x(1), 1.0 + 1e-12);
    max_x = std::max(max_x, std::abs(x(0)));
    max_y = std::max(max_y, std::abs(x(1)));
  }
  EXPECT_NEAR(max_x, 0.5, 0.01);
  EXPECT_NEAR(max_y, 1.0, 0.02);
}

TEST(EllipsoidSampler, RejectsInvalidShape) {
  Eigen::Matrix2d S;
  S << 1, 0, 0, -1;
  EXPECT_THROW(EllipsoidSampler(Eigen::Vector2d::Zero(), S, 1.0), ConfigError);
  EXPECT_THROW(EllipsoidSampler(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity(), kInf),
               ConfigError);
  EXPECT_THROW(EllipsoidSampler(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity(), 0.0),
               ConfigError);
}

TEST(RhoFinal, QuadraticForm) {
  TvlqrPolicy p = di().policy;
  EXPECT_EQ(rho_final(p, Eigen::Vector2d::Zero()), 0);
  p.S.back() = Eigen::Matrix2d::Identity();
  EXPECT_EQ(rho_final(p, Eigen::Vector2d(1, 1)), 2);
  const Eigen::Vector2d xbar = di().scenario.estimation.goal_deviation;
  const Eigen::MatrixXd& S = di().policy.S.back();
  const double naive = xbar(0) * xbar(0) * S(0, 0) + 2 * xbar(0) * xbar(1) * S(0, 1) +
                       xbar(1) * xbar(1) * S(1, 1);
  EXPECT_NEAR(di().rho_f, naive, 1e-14 * naive);
}

TEST(Estimate, NoSimulationsLeavesFunnelOpen) {
  const EstimationResult r = estimate_funnel(*di().scenario.system, di().policy, di().config(0, 1));
  for (int k = 0; k + 1 < r.funnel.num_knots(); ++k) EXPECT_TRUE(std::isinf(r.funnel.rho[k]));
  EXPECT_EQ(r.funnel.outlet(), di().rho_f);
  EXPECT_TRUE(r.log.empty());
}

TEST(Estimate, InvariantsHoldAlongTheLog) {
  const DiPipeline& d = di();
  const EstimationConfig config = d.config(300, 5);
  const EstimationResult r = estimate_funnel(*d.scenario.system, d.policy, config);
  const int m = r.funnel.num_knots();
  std::vector<double> rho(m, kInf);
  rho.back() = d.rho_f;
  const Eigen::VectorXd c = d.policy.nominal.states.col(0);
  for (const SimulationRecord& record : r.log) {
    const double inlet = std::isinf(rho[0]) ? config.bootstrap_factor * d.rho_f : rho[0];
    ASSERT_LE(quadratic_form(d.policy.S.front(), record.x0 - c), inlet * (1 + 1e-12))
        << "sample " << record.index;
    for (const ShrinkUpdate& u : record.updates) {
      ASSERT_LT(u.knot, m - 1) << "outlet changed by sample " << record.index;
      ASSERT_LE(u.rho, rho[u.knot]) << "expansion at knot " << u.knot;
      rho[u.knot] = u.rho;
    }
  }
  EXPECT_EQ(rho, r.funnel.rho);
  EXPECT_EQ(r.funnel.outlet(), d.rho_f);
  EXPECT_TRUE(std::isfinite(r.funnel.inlet()));
}

TEST(Estimate, SeededDeterminism) {
  const DiPipeline& d = di();
  const EstimationResult a = estimate_funnel(*d.scenario.system, d.policy, d.config(150, 9));
  const EstimationResult b = estimate_funnel(*d.scenario.system, d.policy, d.config(150, 9));
  const EstimationResult c = estimate_funnel(*d.scenario.system, d.policy, d.config(150, 10));
  EXPECT_EQ(a.funnel.rho, b.funnel.rho);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].x0, b.log[i].x0);
  EXPECT_NE(a.funnel.rho, c.funnel.rho);
}

TEST(Estimate, ParallelIsConservative) {
  const DiPipeline& d = di();
  // Candidates spread over a wide region so that both modes shrink.
  const EllipsoidSampler region(d.policy.nominal.states.col(0), d.policy.S.front(), 50 * d.rho_f);
  Rng rng = make_stream(24, Stream::kTesting);
  std::vector<Eigen::VectorXd> candidates;
  for (int i = 0; i < 200; ++i) candidates.push_back(region.sample(rng));
  EstimationConfig sequential = d.config(0, 0);
  EstimationConfig parallel = sequential;
  parallel.parallel = true;
  parallel.threads = 4;
  parallel.batch_size = 16;
  const auto s = estimate_funnel_from_candidates(*d.scenario.system, d.policy, candidates, sequential);
  const auto p = estimate_funnel_from_candidates(*d.scenario.system, d.policy, candidates, parallel);
  int shrunk = 0;
  for (int k = 0; k < s.funnel.num_knots(); ++k) {
    EXPECT_LE(p.funnel.rho[k], s.funnel.rho[k]) << "knot " << k;
    shrunk += std::isfinite(s.funnel.rho[k]);
  }
  EXPECT_GT(shrunk, 1);
  EXPECT_EQ(p.funnel.outlet(), s.funnel.outlet());
}

TEST(Estimate, CandidateOutsideInletShrinksNothing) {
  const DiPipeline& d = di();
  std::vector<Eigen::VectorXd> candidates;
  candidates.push_back(d.policy.nominal.states.col(0) + Eigen::Vector2d(1.0, 0));
  candidates.push_back(d.policy.nominal.states.col(0) + Eigen::Vector2d(50, 0));
  const auto r = estimate_funnel_from_candidates(*d.scenario.system, d.policy, candidates,
                                                 d.config(0, 0));
  ASSERT_EQ(r.log.size(), 2u);
  EXPECT_TRUE(r.log[1].updates.empty());
  EXPECT_EQ(r.log[1].breach_knot, 0);
}

TEST(ShrinkDecision, LowersOnlyKnotsBeforeTheBreach) {
  RolloutResult rollout;
  rollout.cost_to_go = {5, 4, 9, 1};
  const std::vector<double> rho = {10, 3.5, 8, 2};
  const ShrinkDecision d = shrink_decision(rollout, rho);
  EXPECT_EQ(d.breach_knot, 1);
  ASSERT_EQ(d.updates.size(), 1u);
  EXPECT_EQ(d.updates[0].knot, 0);
  EXPECT_EQ(d.updates[0].rho, 5);

  RolloutResult stopped;
  stopped.termination = Termination::kFuelExceeded;
  stopped.breach_knot = 2;
  stopped.cost_to_go = {1, 2};
  const ShrinkDecision f = shrink_decision(stopped, {10, 10, 10, 2});
  EXPECT_EQ(f.breach_knot, 2);
  EXPECT_EQ(f.updates.size(), 2u);

  RolloutResult inside;
  inside.cost_to_go = {1, 1, 1, 1};
  EXPECT_EQ(shrink_decision(inside, rho).breach_knot, -1);
  EXPECT_TRUE(shrink_decision(inside, rho).updates.empty());
}

TEST(Wilson, MatchesClosedForm) {
  const auto oracle = [](double k, double n, double z) {
    const double p = k / n, z2 = z * z;
    const double center = (p + z2 / (2 * n)) / (1 + z2 / n);
    const double half = z / (1 + z2 / n) * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n));
    return std::pair{center - half, center + half};
  };
  for (auto [k, n] : {std::pair{0, 10}, {7, 10}, {190, 200}, {200, 200}}) {
    const Interval w = wilson_interval(k, n);
    const auto [lo, hi] = oracle(k, n, 1.959963984540054);
    EXPECT_NEAR(w.low, lo, 1e-12);
    EXPECT_NEAR(w.high, hi, 1e-12);
  }
}

TEST(Verify, TinyInletAlwaysSucceeds) {
  const DiPipeline& d = di();
  const Funnel funnel = make_funnel(d.policy, 1e-6 * d.rho_f, d.rho_f);
  const VerificationResult v =
      verify_funnel(*d.scenario.system, d.policy, funnel, 50, 3, rollout_config(d.scenario));
  EXPECT_EQ(v.successes, 50);
  EXPECT_EQ(v.fraction, 1.0);
  EXPECT_THROW(verify_funnel(*d.scenario.system, d.policy, make_funnel(d.policy, kInf, d.rho_f),
                             10, 3, rollout_config(d.scenario)),
               InputError);
}

TEST(OutletCheck, DoubleIntegratorPasses) {
  const DiPipeline& d = di();
  const OutletCheck c = check_outlet(*d.scenario.system, d.policy, d.rho_f,
                                     d.scenario.estimation.rollout, 1);
  EXPECT_TRUE(c.passed);
  EXPECT_EQ(c.samples, 100);
  EXPECT_LT(c.worst_ratio, 1.0);
}
