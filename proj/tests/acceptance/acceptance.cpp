// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Pass criterion numbers as arguments to run a
// subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tvroa/funnel.hpp"
#include "tvroa/rng.hpp"
#include "tvroa/roa.hpp"
#include "tvroa/scenarios.hpp"
#include "tvroa/sim.hpp"
#include "tvroa/tvlqr.hpp"

using namespace tvroa;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buffer[512];
  std::snprintf(buffer, sizeof buffer, format, args...);
  return buffer;
}

// Replays an estimation log against the shrink rules: thresholds only drop,
// the outlet never moves and every sample came from the inlet of its time.
std::string replay_violation(const EstimationResult& r, const TvlqrPolicy& policy,
                             double bootstrap_factor) {
  const int m = r.funnel.num_knots();
  std::vector<double> rho(m, kInf);
  rho.back() = r.rho_f;
  const Eigen::VectorXd c = policy.nominal.states.col(0);
  for (const auto& record : r.log) {
    const double inlet = std::isinf(rho[0]) ? bootstrap_factor * r.rho_f : rho[0];
    if (quadratic_form(policy.S.front(), record.x0 - c) > inlet * (1 + 1e-12)) {
      return fmt("sample %d outside the inlet", record.index);
    }
    for (const auto& u : record.updates) {
      if (u.knot >= m - 1) return fmt("sample %d moved the outlet", record.index);
      if (u.rho > rho[u.knot]) return fmt("sample %d expanded knot %d", record.index, u.knot);
      rho[u.knot] = u.rho;
    }
  }
  if (rho != r.funnel.rho) return "replayed thresholds differ from the result";
  if (r.funnel.outlet() != r.rho_f) return "outlet differs from rho_f";
  return "";
}

// Shared products of the expensive stages.
struct Freeflyer {
  Scenario scenario = freeflyer_scenario();
  TrajoptResult solved;
  double trajopt_seconds = 0;
  TvlqrPolicy policy;
  bool ready = false;
};

struct Context {
  Freeflyer freeflyer;
  std::optional<EstimationResult> freeflyer_funnel;
  std::optional<EstimationResult> detumble_funnel;
  TvlqrPolicy detumble_policy;
  double detumble_bootstrap = 0;
};

Outcome dynamics_validity() {
  const auto start = Clock::now();
  const Scenario s = detumble_scenario();
  const MechanicalSystem& system = *s.system;
  const MultibodyModel& model = *s.model;

  // Zero input: momentum conservation over 10 s at dt = 1e-3.
  Eigen::VectorXd x(12);
  x << s.bounds.q0, s.bounds.v0;
  x.tail(6) += Eigen::VectorXd::LinSpaced(6, 0.05, -0.1);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(6);
  const auto free = [&](const Eigen::VectorXd& y) { return system.state_derivative(y, zero); };
  const Momentum m0 = momentum(model, x.head(6), x.tail(6));
  for (int i = 0; i < 10000; ++i) x = rk4_step(free, x, 1e-3);
  const Momentum m1 = momentum(model, x.head(6), x.tail(6));
  const double dL = std::abs(m1.angular - m0.angular) / std::abs(m0.angular);
  const double dP = (m1.linear - m0.linear).norm() / m0.linear.norm();

  // Constant input: per-step energy increment against the work integral.
  x << s.bounds.q0, s.bounds.v0;
  const Eigen::VectorXd u = (Eigen::VectorXd(6) << 4, -3, 20, -15, 10, 5).finished();
  const auto forced = [&](const Eigen::VectorXd& y) { return system.state_derivative(y, u); };
  const double dt = 1e-3;
  double worst = 0;
  for (int i = 0; i < 2000; ++i) {
    const Eigen::VectorXd mid = rk4_step(forced, x, dt / 2);
    const Eigen::VectorXd next = rk4_step(forced, x, dt);
    const double work =
        dt / 6 * (x.tail(6).dot(u) + 4 * mid.tail(6).dot(u) + next.tail(6).dot(u));
    const double dT = kinetic_energy(model, next.head(6), next.tail(6)) -
                      kinetic_energy(model, x.head(6), x.tail(6));
    worst = std::max(worst, std::abs(dT - work) / std::abs(work));
    x = next;
  }
  const double elapsed = seconds_since(start);
  return {dL <= 1e-6 && dP <= 1e-6 && worst <= 1e-5 && elapsed < 10,
          fmt("L drift %.1e, P drift %.1e, worst energy/work mismatch %.1e per step, %.1f s",
              dL, dP, worst, elapsed)};
}

Outcome lqr_correctness() {
  Eigen::Matrix2d A;
  A << 0, 1, 0, 0;
  const Eigen::MatrixXd B = Eigen::Vector2d(0, 1);
  const Eigen::MatrixXd S =
      solve_care(A, B, Eigen::Matrix2d::Identity(), Eigen::MatrixXd::Identity(1, 1));
  Eigen::Matrix2d closed_form;
  closed_form << std::sqrt(3.0), 1, 1, std::sqrt(3.0);
  const double care_error = (S - closed_form).cwiseAbs().maxCoeff();

  // Frozen dynamics: the freeflyer at rest, Q_f = S_inf.
  const Scenario s = freeflyer_scenario();
  Trajectory rest;
  rest.dt = 0.1;
  rest.states = (Eigen::VectorXd(6) << 3, 1, 2, 0, 0, 0).finished().replicate(1, 101);
  rest.inputs = Eigen::MatrixXd::Zero(3, 100);
  const TvlqrPolicy policy = synthesize(*s.system, rest, s.Q, s.R);
  double drift = 0;
  for (const auto& Sk : policy.S) {
    drift = std::max(drift, (Sk - policy.S_inf).cwiseAbs().maxCoeff() /
                                policy.S_inf.cwiseAbs().maxCoeff());
  }
  return {care_error <= 1e-8 && drift <= 1e-6,
          fmt("CARE error %.1e, frozen TVLQR drift %.1e relative", care_error, drift)};
}

Outcome trajectory_optimization(Context& ctx) {
  Freeflyer& f = ctx.freeflyer;
  auto start = Clock::now();
  try {
    f.solved = optimize(f.scenario);
  } catch (const SolverFailure& e) {
    return {false, std::string("freeflyer solve failed: ") + e.what()};
  }
  f.trajopt_seconds = seconds_since(start);
  const Trajectory& t = f.solved.trajectory;
  double waypoint_error = 0;
  for (const auto& w : f.scenario.bounds.waypoints) {
    waypoint_error = std::max(
        waypoint_error, (t.states.col(w.knot).head(3) - w.positions).cwiseAbs().maxCoeff());
  }
  const FeasibilityReport feasibility = check_feasibility(*f.scenario.system, f.scenario.bounds, t);

  // Minimum-effort double integrator against u(t) = 6 − 12t.
  start = Clock::now();
  Scenario di = double_integrator_scenario();
  di.num_intervals = 100;
  di.initial_dt = 0.01;
  di.bounds.dt_min = di.bounds.dt_max = 0.01;
  di.bounds.u_max = Eigen::VectorXd::Constant(1, 100.0);
  di.bounds.u_min = -di.bounds.u_max;
  double effort_error = kInf;
  try {
    const Trajectory u = optimize(di).trajectory;
    effort_error = 0;
    for (int k = 0; k < u.num_intervals(); ++k) {
      effort_error = std::max(effort_error, std::abs(u.inputs(0, k) - (6 - 12 * u.time(k))) / 6);
    }
  } catch (const SolverFailure&) {
  }
  const double di_seconds = seconds_since(start);
  f.ready = true;
  return {waypoint_error <= 1e-6 && feasibility.max_violation() <= 1e-6 &&
              effort_error <= 0.02 && f.trajopt_seconds < 60 && di_seconds < 60,
          fmt("freeflyer waypoint error %.1e, max violation %.1e, %.1f s; minimum-effort "
              "error %.2f%% of peak, %.1f s",
              waypoint_error, feasibility.max_violation(), f.trajopt_seconds,
              100 * effort_error, di_seconds)};
}

Outcome closed_loop_stabilization(Context& ctx) {
  Freeflyer& f = ctx.freeflyer;
  if (!f.ready) return {false, "freeflyer trajectory unavailable"};
  const auto start = Clock::now();
  f.policy = synthesize(f.scenario, reference_trajectory(f.scenario, f.solved.trajectory));
  const double rho_f = rho_final(f.policy, f.scenario.estimation.goal_deviation);
  const RolloutConfig config = rollout_config(f.scenario, false);
  int converged = 0;
  double worst = 0;
  for (const auto& offset : grid_offsets()) {
    Eigen::VectorXd x0 = f.policy.nominal.states.col(0);
    x0.head<2>() += offset;
    const RolloutResult r = rollout(*f.scenario.system, f.policy, x0, config);
    const bool ok = r.completed() && r.cost_to_go.back() < rho_f;
    converged += ok;
    if (r.completed()) worst = std::max(worst, r.cost_to_go.back() / rho_f);
  }
  const double elapsed = seconds_since(start);
  return {converged == 25 && elapsed + f.trajopt_seconds < 120,
          fmt("%d/25 grid rollouts end inside the outlet (worst J_f/rho_f %.1e), %.1f s "
              "plus %.1f s trajectory optimization",
              converged, worst, elapsed, f.trajopt_seconds)};
}

Outcome funnel_containment() {
  const auto start = Clock::now();
  const Scenario s = double_integrator_scenario();
  const Trajectory reference = reference_trajectory(s, optimize(s).trajectory);
  const TvlqrPolicy policy = synthesize(s, reference);
  const EstimationResult est = estimate_funnel(*s.system, policy, s.estimation);
  const Funnel& funnel = est.funnel;
  const VerificationResult check =
      verify_funnel(*s.system, policy, funnel, 500, s.estimation.seed + 100, s.estimation.rollout);

  // Ground truth: dense grid of initial states, each rolled out and judged by
  // the same outlet test. The box grows until no success touches its edge.
  const double rho0 = funnel.inlet();
  const Eigen::Matrix2d S0 = funnel.S.front();
  const double inlet_area = M_PI * rho0 / std::sqrt(S0.determinant());
  const Eigen::Matrix2d Sinv = S0.inverse();
  double scale = 3;
  double truth = 0;
  int edge = 0;
  const int n = 150;
  for (int attempt = 0; attempt < 4; ++attempt, scale *= 1.5) {
    const double hq = scale * std::sqrt(rho0 * Sinv(0, 0));
    const double hv = scale * std::sqrt(rho0 * Sinv(1, 1));
    int ok = 0;
    edge = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const Eigen::VectorXd x0 =
            reference.states.col(0) +
            Eigen::Vector2d(-hq + (i + 0.5) * 2 * hq / n, -hv + (j + 0.5) * 2 * hv / n);
        const RolloutResult r = rollout(*s.system, policy, x0, s.estimation.rollout);
        const bool success = r.completed() && r.cost_to_go.back() < est.rho_f;
        ok += success;
        edge += success && (i == 0 || j == 0 || i == n - 1 || j == n - 1);
      }
    }
    truth = ok * (2 * hq / n) * (2 * hv / n);
    if (edge == 0) break;
  }
  const double ratio = inlet_area / truth;
  const double elapsed = seconds_since(start);
  return {check.fraction >= 0.95 && ratio >= 0.5 && ratio <= 1.0 && edge == 0 && elapsed < 600,
          fmt("%d/500 inlet samples succeed; inlet area %.3f vs grid truth %.3f (ratio %.2f), "
              "%.0f s",
              check.successes, inlet_area, truth, ratio, elapsed)};
}

Outcome fuel_ordering(Context& ctx) {
  const auto start = Clock::now();
  const Scenario s = detumble_scenario();
  TrajoptResult solved;
  try {
    solved = optimize(s);
  } catch (const SolverFailure& e) {
    return {false, std::string("detumble solve failed: ") + e.what()};
  }
  const TvlqrPolicy policy = synthesize(s, reference_trajectory(s, solved.trajectory));
  const double alphas[] = {kInf, 1.0, 0.5};
  std::vector<std::vector<std::vector<double>>> traces(3);
  std::optional<OutletCheck> outlet;
  for (int a = 0; a < 3; ++a) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      EstimationConfig config = s.estimation;
      config.num_simulations = 200;
      config.fuel_alpha = alphas[a];
      config.seed = seed;
      config.check_outlet = a == 0 && seed == 1;
      EstimationResult r = estimate_funnel(*s.system, policy, config);
      if (r.outlet) outlet = r.outlet;
      traces[a].push_back(r.funnel.rho);
      if (a == 0 && seed == 1) {
        ctx.detumble_funnel = std::move(r);
        ctx.detumble_policy = policy;
        ctx.detumble_bootstrap = config.bootstrap_factor;
      }
    }
  }
  const int m = static_cast<int>(traces[0][0].size());
  int shrunk = 0, ordered = 0;
  for (int k = 0; k + 1 < m; ++k) {
    double median[3];
    for (int a = 0; a < 3; ++a) {
      std::vector<double> v;
      for (const auto& t : traces[a]) v.push_back(t[k]);
      std::nth_element(v.begin(), v.begin() + 2, v.end());
      median[a] = v[2];
    }
    if (std::isinf(median[0]) && std::isinf(median[1]) && std::isinf(median[2])) continue;
    ++shrunk;
    ordered += median[2] <= median[1] && median[1] <= median[0];
  }
  const double elapsed = seconds_since(start);
  const bool outlet_ok = outlet && outlet->passed;
  return {shrunk > 0 && ordered >= 0.9 * shrunk && elapsed < 1800,
          fmt("median rho(1/2) <= rho(1) <= rho(inf) at %d/%d shrunk knots; outlet check %s; "
              "%.0f s",
              ordered, shrunk, outlet_ok ? "passed" : "failed", elapsed)};
}

Outcome deadband_failure(Context& ctx) {
  Freeflyer& f = ctx.freeflyer;
  if (!f.ready || f.policy.S.empty()) return {false, "freeflyer policy unavailable"};
  const auto start = Clock::now();
  EstimationResult est = estimate_funnel(*f.scenario.system, f.policy, f.scenario.estimation);
  const int n = 200;
  const std::uint64_t seed = f.scenario.estimation.seed + 7;
  const VerificationResult off = verify_funnel(*f.scenario.system, f.policy, est.funnel, n, seed,
                                               rollout_config(f.scenario, false));
  const VerificationResult on = verify_funnel(*f.scenario.system, f.policy, est.funnel, n, seed,
                                              rollout_config(f.scenario, true));
  // One-sided two-proportion z-test, H1: success(off) > success(on).
  const double p1 = off.fraction, p2 = on.fraction;
  const double pooled = (off.successes + on.successes) / (2.0 * n);
  const double se = std::sqrt(pooled * (1 - pooled) * 2.0 / n);
  const double z = se > 0 ? (p1 - p2) / se : 0;
  const double p_value = se > 0 ? 0.5 * std::erfc(z / std::sqrt(2.0)) : 1;
  double min_speed = kInf, failing_speed = 0;
  int failures = 0;
  for (const auto& t : on.details) {
    if (t.success) continue;
    ++failures;
    min_speed = std::min(min_speed, t.terminal_speed);
    failing_speed += t.terminal_speed;
  }
  const bool moving = failures > 0 && min_speed > 1e-3;
  const double elapsed = seconds_since(start);
  const bool outlet_ok = est.outlet && est.outlet->passed;
  ctx.freeflyer_funnel = std::move(est);
  return {p2 < p1 && p_value < 0.05 && moving,
          fmt("deadband off %d/%d, on %d/%d, one-sided p = %.1e; failing trials terminal speed "
              "min %.3f mean %.3f; outlet check %s; %.0f s",
              off.successes, n, on.successes, n, p_value, failures ? min_speed : 0.0,
              failures ? failing_speed / failures : 0.0, outlet_ok ? "passed" : "failed",
              elapsed)};
}

Outcome invariants(Context& ctx) {
  std::vector<std::string> problems;
  int checked = 0;
  if (ctx.freeflyer_funnel) {
    const std::string v = replay_violation(*ctx.freeflyer_funnel, ctx.freeflyer.policy,
                                           ctx.freeflyer.scenario.estimation.bootstrap_factor);
    if (!v.empty()) problems.push_back("freeflyer: " + v);
    ++checked;
  }
  if (ctx.detumble_funnel) {
    const std::string v =
        replay_violation(*ctx.detumble_funnel, ctx.detumble_policy, ctx.detumble_bootstrap);
    if (!v.empty()) problems.push_back("detumble: " + v);
    ++checked;
  }

  const Scenario s = double_integrator_scenario();
  const TvlqrPolicy policy = synthesize(s, reference_trajectory(s, optimize(s).trajectory));
  EstimationConfig config = s.estimation;
  config.check_outlet = false;
  const EstimationResult a = estimate_funnel(*s.system, policy, config);
  const EstimationResult b = estimate_funnel(*s.system, policy, config);
  const std::string v = replay_violation(a, policy, config.bootstrap_factor);
  if (!v.empty()) problems.push_back("double integrator: " + v);
  ++checked;
  if (a.funnel.rho != b.funnel.rho) problems.push_back("same seed gave different funnels");

  // Parallel against sequential on the same candidates.
  const double rho_f = a.rho_f;
  const EllipsoidSampler region(policy.nominal.states.col(0), policy.S.front(), 50 * rho_f);
  Rng rng = make_stream(2024, Stream::kTesting);
  std::vector<Eigen::VectorXd> candidates;
  for (int i = 0; i < 400; ++i) candidates.push_back(region.sample(rng));
  EstimationConfig parallel = config;
  parallel.parallel = true;
  parallel.threads = 4;
  parallel.batch_size = 16;
  const auto seq = estimate_funnel_from_candidates(*s.system, policy, candidates, config);
  const auto par = estimate_funnel_from_candidates(*s.system, policy, candidates, parallel);
  int above = 0;
  for (int k = 0; k < seq.funnel.num_knots(); ++k) above += par.funnel.rho[k] > seq.funnel.rho[k];
  if (above > 0) problems.push_back(fmt("parallel above sequential at %d knots", above));

  std::string detail = fmt("%d estimation logs replayed, determinism and parallel "
                           "conservatism over %zu candidates",
                           checked, candidates.size());
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  const auto wanted = [&](int n) { return selected.empty() || selected.count(n); };
  // 4 and 7 reuse the freeflyer solve of 3; 8 reuses the logs of 6 and 7.
  if (!selected.empty() && (wanted(4) || wanted(7) || wanted(8))) {
    selected.insert(3);
    if (wanted(7) || wanted(8)) selected.insert(4);
  }

  Context ctx;
  const std::vector<std::pair<int, std::pair<std::string, std::function<Outcome()>>>> criteria = {
      {1, {"dynamics validity", dynamics_validity}},
      {2, {"LQR correctness", lqr_correctness}},
      {3, {"trajectory optimization", [&] { return trajectory_optimization(ctx); }}},
      {4, {"closed-loop stabilization", [&] { return closed_loop_stabilization(ctx); }}},
      {5, {"funnel ground-truth containment", funnel_containment}},
      {6, {"fuel-constraint ordering", [&] { return fuel_ordering(ctx); }}},
      {7, {"deadband failure mode", [&] { return deadband_failure(ctx); }}},
      {8, {"algorithmic invariants", [&] { return invariants(ctx); }}},
  };
  int failed = 0;
  for (const auto& [number, entry] : criteria) {
    if (!wanted(number)) continue;
    Outcome outcome;
    try {
      outcome = entry.second();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    failed += !outcome.passed;
    std::cout << (outcome.passed ? "PASS" : "FAIL") << " criterion " << number << " ("
              << entry.first << "): " << outcome.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
