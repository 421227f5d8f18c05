#include "tvroa/roa.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <random>
#include <thread>

#include <Eigen/Eigenvalues>

namespace tvroa {

Eigen::VectorXd sample_sphere_surface(int dim, Rng& rng) {
  if (dim < 1) throw InputError("sample_sphere_surface: dim must be >= 1");
  std::normal_distribution<double> normal;
  Eigen::VectorXd y(dim);
  double norm = 0;
  do {
    for (int i = 0; i < dim; ++i) y(i) = normal(rng);
    norm = y.norm();
  } while (!(norm > 0));
  return y / norm;
}

Eigen::VectorXd sample_unit_sphere(int dim, Rng& rng) {
  const Eigen::VectorXd direction = sample_sphere_surface(dim, rng);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  return std::pow(uniform(rng), 1.0 / dim) * direction;
}

EllipsoidSampler::EllipsoidSampler(Eigen::VectorXd center,
                                   const Eigen::MatrixXd& S, double rho)
    : center_(std::move(center)), S_(S), rho_(rho) {
  const Eigen::Index n = center_.size();
  if (S.rows() != n || S.cols() != n) {
    throw ConfigError("EllipsoidSampler: shape matrix has wrong size");
  }
  if (!(rho > 0) || std::isinf(rho)) {
    throw ConfigError("EllipsoidSampler: threshold must be positive and finite");
  }
  if ((S - S.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1 + S.norm())) {
    throw ConfigError("EllipsoidSampler: shape matrix is not symmetric");
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
      0.5 * (S + S.transpose()) / rho);
  W_ = eig.eigenvectors();
  lambda_ = eig.eigenvalues();
  if (!(lambda_.minCoeff() > 0)) {
    throw ConfigError("EllipsoidSampler: shape matrix is not positive definite");
  }
  transform_ = W_ * lambda_.cwiseSqrt().cwiseInverse().asDiagonal();
}

Eigen::VectorXd EllipsoidSampler::map(const Eigen::VectorXd& y) const {
  require_dim(y.size(), center_.size(), "EllipsoidSampler::map");
  Eigen::VectorXd xbar = transform_ * y;
  // Rounding can put a boundary image a few ulps outside; pull it back.
  for (double q = quadratic_form(S_, xbar); q > rho_;
       q = quadratic_form(S_, xbar)) {
    xbar *= std::sqrt(rho_ / q) * (1.0 - 1e-15);
  }
  return center_ + xbar;
}

Eigen::VectorXd EllipsoidSampler::sample(Rng& rng) const {
  return map(sample_unit_sphere(static_cast<int>(center_.size()), rng));
}

double rho_final(const TvlqrPolicy& policy,
                 const Eigen::VectorXd& goal_deviation) {
  require_dim(goal_deviation.size(), policy.num_states(),
              "rho_final: goal deviation");
  return quadratic_form(policy.final_S(), goal_deviation);
}

OutletCheck check_outlet(const MechanicalSystem& system,
                         const TvlqrPolicy& policy, double rho_f,
                         const RolloutConfig& rollout_config,
                         std::uint64_t seed, int samples, double duration,
                         double sample_period) {
  const int N = policy.num_intervals();
  const int nq = policy.nominal.num_positions();
  const EllipsoidSampler outlet(policy.nominal.states.col(N), policy.final_S(),
                                rho_f);
  Eigen::VectorXd rest = Eigen::VectorXd::Zero(2 * nq);
  rest.head(nq) = policy.nominal.states.col(N).head(nq);
  const int per_sample =
      std::max(1, static_cast<int>(std::ceil(sample_period / rollout_config.dt - 1e-9)));
  const double h = sample_period / per_sample;
  const int periods = static_cast<int>(std::round(duration / sample_period));

  RolloutConfig stage = rollout_config;
  stage.deadband.resize(0);
  const auto f = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd u = -policy.K_inf * (x - rest);
    condition_input(stage, &u);
    return system.state_derivative(x, u);
  };

  OutletCheck check;
  check.samples = samples;
  Rng rng = make_stream(seed, Stream::kOutletCheck);
  for (int i = 0; i < samples; ++i) {
    Eigen::VectorXd x = outlet.map(
        sample_sphere_surface(policy.num_states(), rng));
    const double V0 = quadratic_form(policy.S_inf, x - rest);
    double V = V0;
    bool ok = std::isfinite(V0);
    for (int p = 0; p < periods && ok; ++p) {
      for (int s = 0; s < per_sample; ++s) x = rk4_step(f, x, h);
      V = quadratic_form(policy.S_inf, x - rest);
      ok = std::isfinite(V) && V <= V0 * (1 + 1e-9);
      check.worst_ratio = std::max(check.worst_ratio, V / V0);
    }
    ok = ok && V < V0;
    if (!ok) ++check.failures;
  }
  check.passed = check.failures == 0;
  return check;
}

ShrinkDecision shrink_decision(const RolloutResult& rollout,
                               const std::vector<double>& rho) {
  ShrinkDecision decision;
  const int reached = rollout.knots_reached();
  for (int k = 0; k < reached; ++k) {
    if (rollout.cost_to_go[k] > rho[k]) {
      decision.breach_knot = k;
      break;
    }
  }
  if (decision.breach_knot < 0 && !rollout.completed()) {
    decision.breach_knot = rollout.breach_knot;
  }
  for (int k = 0; k < decision.breach_knot; ++k) {
    if (rollout.cost_to_go[k] < rho[k]) {
      decision.updates.push_back({k, rollout.cost_to_go[k]});
    }
  }
  return decision;
}

namespace {

// Produces the initial state of simulation j (1-based) given the current
// thresholds.
using CandidateSource =
    std::function<Eigen::VectorXd(int j, const std::vector<double>& rho)>;

void apply(const std::vector<ShrinkUpdate>& updates, std::vector<double>* rho) {
  for (const auto& u : updates) (*rho)[u.knot] = std::min((*rho)[u.knot], u.rho);
}

std::vector<RolloutResult> run_batch(const MechanicalSystem& system,
                                     const TvlqrPolicy& policy,
                                     const std::vector<Eigen::VectorXd>& starts,
                                     const RolloutConfig& config, int threads) {
  std::vector<RolloutResult> results(starts.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (std::size_t i = next++; i < starts.size(); i = next++) {
      try {
        results[i] = rollout(system, policy, starts[i], config);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

EstimationResult estimate(const MechanicalSystem& system,
                          const TvlqrPolicy& policy,
                          const EstimationConfig& config, int count,
                          const CandidateSource& next_candidate) {
  if (count < 0) throw InputError("estimate_funnel: negative simulation count");
  EstimationResult result;
  result.rho_f = rho_final(policy, config.goal_deviation);
  if (!(result.rho_f > 0)) {
    throw ConfigError("estimate_funnel: goal deviation gives rho_f = 0");
  }
  result.nominal_fuel = nominal_fuel(policy.nominal);
  result.funnel = make_funnel(policy, kInf, result.rho_f);
  std::vector<double>& rho = result.funnel.rho;
  const int m = policy.num_intervals();

  RolloutConfig base = config.rollout;
  base.fuel = FuelBudget{result.nominal_fuel, config.fuel_alpha};

  auto make_record = [](int j, const Eigen::VectorXd& x0,
                        const RolloutResult& r, const ShrinkDecision& d) {
    SimulationRecord rec;
    rec.index = j;
    rec.x0 = x0;
    rec.termination = r.termination;
    rec.breach_knot = d.breach_knot;
    rec.updates = d.updates;
    return rec;
  };

  if (!config.parallel) {
    for (int j = 1; j <= count; ++j) {
      if (std::isinf(rho[0])) ++result.bootstrap_samples;
      const Eigen::VectorXd x0 = next_candidate(j, rho);
      RolloutConfig rc = base;
      rc.cost_limits = rho;
      const RolloutResult r = rollout(system, policy, x0, rc);
      const ShrinkDecision d = shrink_decision(r, rho);
      apply(d.updates, &rho);
      result.log.push_back(make_record(j, x0, r, d));
    }
  } else {
    const int threads =
        config.threads > 0
            ? config.threads
            : std::max(1u, std::thread::hardware_concurrency());
    const int batch = config.batch_size > 0 ? config.batch_size : 4 * threads;
    for (int first = 1; first <= count; first += batch) {
      const int last = std::min(count, first + batch - 1);
      const std::vector<double> snapshot = rho;
      std::vector<Eigen::VectorXd> starts;
      for (int j = first; j <= last; ++j) {
        if (std::isinf(snapshot[0])) ++result.bootstrap_samples;
        starts.push_back(next_candidate(j, snapshot));
      }
      RolloutConfig rc = base;
      // Traces cut at the snapshot breach still hold every value the
      // in-order replay below needs: its thresholds are never larger.
      rc.cost_limits = snapshot;
      const auto results = run_batch(system, policy, starts, rc, threads);

      std::vector<double> against_snapshot = snapshot;
      for (int i = 0; i <= last - first; ++i) {
        const ShrinkDecision frozen = shrink_decision(results[i], snapshot);
        const ShrinkDecision replay = shrink_decision(results[i], rho);
        apply(frozen.updates, &against_snapshot);
        apply(replay.updates, &rho);
        ShrinkDecision logged = frozen;
        for (const auto& u : replay.updates) {
          auto it = std::find_if(logged.updates.begin(), logged.updates.end(),
                                 [&](const ShrinkUpdate& v) { return v.knot == u.knot; });
          if (it == logged.updates.end()) {
            logged.updates.push_back(u);
          } else {
            it->rho = std::min(it->rho, u.rho);
          }
        }
        result.log.push_back(make_record(first + i, starts[i], results[i], logged));
      }
      for (int k = 0; k <= m; ++k) rho[k] = std::min(rho[k], against_snapshot[k]);
    }
  }

  if (count > 0 && std::isinf(rho[0])) {
    throw EstimationError(
        "estimate_funnel: every simulation stayed inside the bootstrap region "
        "(rho_boot = " +
        std::to_string(config.bootstrap_factor * result.rho_f) +
        "); increase the bootstrap factor so the inlet can be bounded");
  }
  if (config.check_outlet) {
    result.outlet = check_outlet(system, policy, result.rho_f, config.rollout,
                                 config.seed);
  }
  return result;
}

}  // namespace

EstimationResult estimate_funnel(const MechanicalSystem& system,
                                 const TvlqrPolicy& policy,
                                 const EstimationConfig& config) {
  if (config.num_simulations < 0) {
    throw InputError("estimate_funnel: negative simulation count");
  }
  if (!(config.bootstrap_factor > 0)) {
    throw ConfigError("estimate_funnel: bootstrap factor must be positive");
  }
  const double rho_f = rho_final(policy, config.goal_deviation);
  const Eigen::VectorXd center = policy.nominal.states.col(0);
  const Eigen::MatrixXd& S0 = policy.S.front();
  auto candidate = [&](int j, const std::vector<double>& rho) {
    const double inlet =
        std::isinf(rho[0]) ? config.bootstrap_factor * rho_f : rho[0];
    Rng rng = make_stream(config.seed, Stream::kEstimation, j);
    return EllipsoidSampler(center, S0, inlet).sample(rng);
  };
  return estimate(system, policy, config, config.num_simulations, candidate);
}

EstimationResult estimate_funnel_from_candidates(
    const MechanicalSystem& system, const TvlqrPolicy& policy,
    const std::vector<Eigen::VectorXd>& candidates,
    const EstimationConfig& config) {
  auto candidate = [&](int j, const std::vector<double>&) {
    return candidates[j - 1];
  };
  return estimate(system, policy, config, static_cast<int>(candidates.size()),
                  candidate);
}

Interval wilson_interval(int successes, int trials, double z) {
  if (trials <= 0) return {0.0, 1.0};
  const double n = trials;
  const double p = successes / n;
  const double z2 = z * z;
  const double denom = 1 + z2 / n;
  const double center = (p + z2 / (2 * n)) / denom;
  const double half =
      z / denom * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n));
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

VerificationResult verify_funnel(const MechanicalSystem& system,
                                 const TvlqrPolicy& policy,
                                 const Funnel& funnel, int n_check,
                                 std::uint64_t seed,
                                 const RolloutConfig& rollout_config) {
  require_dim(funnel.num_knots(), policy.num_knots(), "verify_funnel: knots");
  if (n_check < 0) throw InputError("verify_funnel: negative sample count");
  VerificationResult result;
  result.trials = n_check;
  if (n_check == 0) {
    result.wilson = wilson_interval(0, 0);
    return result;
  }
  if (std::isinf(funnel.inlet())) {
    throw InputError("verify_funnel: the inlet is unbounded");
  }
  const EllipsoidSampler inlet(funnel.centers.col(0), funnel.S.front(),
                               funnel.inlet());
  const int nq = policy.nominal.num_positions();
  for (int i = 0; i < n_check; ++i) {
    Rng rng = make_stream(seed, Stream::kVerification, i);
    VerificationTrial trial;
    trial.x0 = inlet.sample(rng);
    const RolloutResult r = rollout(system, policy, trial.x0, rollout_config);
    trial.termination = r.termination;
    trial.final_cost = r.cost_to_go.back();
    trial.terminal_speed = r.final_state.tail(nq).norm();
    trial.success = r.completed() && trial.final_cost < funnel.outlet();
    trial.states = r.states;
    result.successes += trial.success;
    result.details.push_back(std::move(trial));
  }
  result.fraction = double(result.successes) / n_check;
  result.wilson = wilson_interval(result.successes, n_check);
  return result;
}

}  // namespace tvroa
