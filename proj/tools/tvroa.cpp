// tvroa: optimize -> synthesize -> estimate -> verify -> plot.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 numerical or
// solver failure.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "tvroa/funnel.hpp"
#include "tvroa/nlp.hpp"
#include "tvroa/roa.hpp"
#include "tvroa/scenarios.hpp"
#include "tvroa/sim.hpp"
#include "tvroa/trajectory.hpp"
#include "tvroa/tvlqr.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;
using namespace tvroa;

namespace {

constexpr int kUsageError = 1;
constexpr int kNumericalError = 2;

std::string hex(const unsigned char* data, unsigned size) {
  std::ostringstream out;
  for (unsigned i = 0; i < size; ++i) {
    out << std::hex << std::setw(2) << std::setfill('0') << int(data[i]);
  }
  return out.str();
}

std::string sha256(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned size = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &size, EVP_sha256(), nullptr);
  return hex(digest, size);
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string file_sha256(const fs::path& path) { return sha256(read_bytes(path)); }

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

// Written next to the primary output as <output>.manifest.json.
class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)) {}

  void config(const std::string& hash) { config_hash_ = hash; }
  void seed(std::uint64_t seed) { seed_ = seed; }
  void input(const fs::path& path) { inputs_[path.string()] = file_sha256(path); }
  void output(const fs::path& path) { outputs_.push_back(path); }
  void stage(const std::string& name, double seconds) { timings_[name] = seconds; }

  void write(const fs::path& primary) const {
    Json j;
    j["tool"] = "tvroa";
    j["version"] = TVROA_VERSION;
    j["command"] = command_;
    j["config_sha256"] = config_hash_;
    if (seed_) j["seed"] = *seed_;
    j["inputs"] = inputs_;
    Json outputs = Json::object();
    for (const auto& path : outputs_) {
      if (!fs::exists(path)) {
        throw InputError("manifest: output " + path.string() + " was not written");
      }
      outputs[path.string()] = file_sha256(path);
    }
    j["outputs"] = outputs;
    j["timings_s"] = timings_;
    const fs::path path = primary.string() + ".manifest.json";
    std::ofstream out(path);
    if (!out) throw InputError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << "\n";
  }

 private:
  std::string command_;
  std::string config_hash_;
  std::optional<std::uint64_t> seed_;
  Json inputs_ = Json::object();
  std::vector<fs::path> outputs_;
  Json timings_ = Json::object();
};

struct ScenarioOptions {
  std::string name = "freeflyer";
  std::string config;

  void add(CLI::App* app) {
    auto* builtin = app->add_option("--scenario", name,
                                    "Built-in scenario: detumble, freeflyer, double_integrator");
    app->add_option("--config", config, "Scenario file (JSON with a base scenario)")
        ->excludes(builtin);
  }

  Scenario load(Manifest* manifest) const {
    if (config.empty()) {
      manifest->config(sha256("builtin:" + name));
      return builtin_scenario(name);
    }
    Scenario s = load_scenario(config);
    manifest->config(file_sha256(config));
    return s;
  }
};

double parse_alpha(const std::string& text) {
  if (text == "inf" || text == "infinity") return kInf;
  std::size_t used = 0;
  double value = 0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || !(value >= 0)) {
    throw ConfigError("--alpha: expected a non-negative number or inf, got '" + text + "'");
  }
  return value;
}

Json vector_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

std::string number(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

std::pair<int, int> parse_axes(const std::string& text) {
  const auto comma = text.find(',');
  try {
    if (comma != std::string::npos) {
      return {std::stoi(text.substr(0, comma)), std::stoi(text.substr(comma + 1))};
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("--axes: expected two state indices such as 0,1, got '" + text + "'");
}

// optimize

struct OptimizeArgs {
  ScenarioOptions scenario;
  std::string out = "trajectory.csv";
};

int run_optimize(const OptimizeArgs& args) {
  Manifest manifest("optimize");
  const Scenario s = args.scenario.load(&manifest);
  const auto start = std::chrono::steady_clock::now();
  TrajoptResult result;
  try {
    result = optimize(s);
  } catch (const SolverFailure& e) {
    std::cerr << "optimize: no feasible trajectory found\n  " << e.what() << "\n";
    std::cerr << "  best iterate: max violation " << e.best().report.max_violation
              << "\n";
    return kNumericalError;
  }
  manifest.stage("optimize", seconds_since(start));
  write_trajectory_csv(result.trajectory, args.out);
  const FeasibilityReport feasibility =
      check_feasibility(*s.system, s.bounds, result.trajectory);
  std::cout << "scenario " << s.name << ": " << result.report.summary() << "\n"
            << "knots " << result.trajectory.num_knots() << ", duration "
            << result.trajectory.duration() << " s, max defect "
            << feasibility.max_defect << "\n";
  manifest.output(args.out);
  manifest.write(args.out);
  return 0;
}

// synthesize

struct SynthesizeArgs {
  ScenarioOptions scenario;
  std::string trajectory = "trajectory.csv";
  std::string qf;
  std::string out = "policy.json";
};

int run_synthesize(const SynthesizeArgs& args) {
  Manifest manifest("synthesize");
  Scenario s = args.scenario.load(&manifest);
  if (args.qf == "care") s.Qf.reset();
  const Trajectory solved = read_trajectory_csv(args.trajectory);
  manifest.input(args.trajectory);
  if (solved.num_states() != s.system->num_states() ||
      solved.num_inputs() != s.system->num_inputs()) {
    throw InputError(args.trajectory + ": dimensions do not match scenario " + s.name);
  }
  const auto start = std::chrono::steady_clock::now();
  const Trajectory reference = reference_trajectory(s, solved);
  const TvlqrPolicy policy = synthesize(s, reference);
  manifest.stage("synthesize", seconds_since(start));
  const double residual =
      riccati_midpoint_residual(policy, linearize(*s.system, reference));
  double largest = 0;
  for (const auto& S : policy.S) largest = std::max(largest, S.norm());
  std::cout << "policy: " << policy.num_knots() << " knots, Q_f "
            << (s.Qf ? "from scenario" : "= S_inf") << "\n"
            << "Riccati midpoint residual " << residual << ", largest |S_k| "
            << largest << "\n";
  write_policy_json(policy, args.out);
  manifest.output(args.out);
  manifest.write(args.out);
  return 0;
}

// estimate

struct EstimateArgs {
  ScenarioOptions scenario;
  std::string policy = "policy.json";
  std::string out = "funnel.json";
  std::string log;
  std::string rho_csv;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> alpha;
  std::optional<int> sims;
  bool parallel = false;
  int threads = 0;
};

void write_log(const EstimationResult& result, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  for (const auto& record : result.log) {
    Json j;
    j["j"] = record.index;
    j["x0"] = vector_json(record.x0);
    j["termination"] = to_string(record.termination);
    j["breach_knot"] = record.breach_knot;
    Json updates = Json::array();
    for (const auto& u : record.updates) updates.push_back({u.knot, u.rho});
    j["updates"] = updates;
    out << j.dump() << "\n";
  }
}

void write_rho_csv(const Funnel& funnel, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out << "knot,t,rho\n";
  for (int k = 0; k < funnel.num_knots(); ++k) {
    out << k << "," << number(funnel.knot_times[k]) << "," << number(funnel.rho[k])
        << "\n";
  }
}

int run_estimate(const EstimateArgs& args) {
  Manifest manifest("estimate");
  const Scenario s = args.scenario.load(&manifest);
  const TvlqrPolicy policy = read_policy_json(args.policy);
  manifest.input(args.policy);
  if (policy.num_states() != s.system->num_states()) {
    throw InputError(args.policy + ": dimensions do not match scenario " + s.name);
  }
  EstimationConfig config = s.estimation;
  if (args.seed) config.seed = *args.seed;
  if (args.alpha) config.fuel_alpha = parse_alpha(*args.alpha);
  if (args.sims) config.num_simulations = *args.sims;
  if (args.parallel) config.parallel = true;
  if (args.threads > 0) config.threads = args.threads;
  manifest.seed(config.seed);

  const auto start = std::chrono::steady_clock::now();
  EstimationResult result;
  try {
    result = estimate_funnel(*s.system, policy, config);
  } catch (const EstimationError& e) {
    std::cerr << "estimate: " << e.what()
              << "\n  the inlet never became finite; increase --sims or the "
                 "estimation.bootstrap_factor, or check the policy\n";
    return kNumericalError;
  }
  manifest.stage("estimate", seconds_since(start));

  const fs::path log = args.log.empty() ? fs::path(args.out).replace_extension(".jsonl")
                                        : fs::path(args.log);
  const fs::path rho = args.rho_csv.empty()
                           ? fs::path(args.out).replace_extension(".rho.csv")
                           : fs::path(args.rho_csv);
  write_funnel_json(result.funnel, args.out);
  write_log(result, log);
  write_rho_csv(result.funnel, rho);

  int fuel_breaches = 0, shrunk = 0;
  for (const auto& r : result.log) {
    fuel_breaches += r.termination == Termination::kFuelExceeded;
  }
  for (double r : result.funnel.rho) shrunk += std::isfinite(r);
  std::cout << "simulations " << result.log.size() << ", fuel breaches "
            << fuel_breaches << ", finite knots " << shrunk << "/"
            << result.funnel.num_knots() << "\n"
            << "rho_f " << result.rho_f << ", rho_0 " << number(result.funnel.inlet())
            << "\n";
  if (result.outlet) {
    std::cout << "outlet check " << (result.outlet->passed ? "passed" : "FAILED")
              << " (" << result.outlet->failures << "/" << result.outlet->samples
              << " failures, worst V/V0 " << result.outlet->worst_ratio << ")\n";
  }
  std::cout << "inlet volume proxy " << number(inlet_volume_proxy(result.funnel))
            << "\n";
  for (const auto& path : {fs::path(args.out), log, rho}) manifest.output(path);
  manifest.write(args.out);
  return 0;
}

// verify

struct VerifyArgs {
  ScenarioOptions scenario;
  std::string policy = "policy.json";
  std::string funnel = "funnel.json";
  std::string out = "trials.csv";
  int n_check = 200;
  std::uint64_t seed = 1;
  bool deadband = false;
};

int run_verify(const VerifyArgs& args) {
  Manifest manifest("verify");
  const Scenario s = args.scenario.load(&manifest);
  const TvlqrPolicy policy = read_policy_json(args.policy);
  const Funnel funnel = read_funnel_json(args.funnel);
  manifest.input(args.policy);
  manifest.input(args.funnel);
  manifest.seed(args.seed);
  if (args.n_check < 0) throw ConfigError("--n-check must be non-negative");

  const auto start = std::chrono::steady_clock::now();
  VerificationResult result;
  if (args.n_check > 0) {
    result = verify_funnel(*s.system, policy, funnel, args.n_check, args.seed,
                           rollout_config(s, args.deadband));
  }
  manifest.stage("verify", seconds_since(start));

  std::ofstream out(args.out);
  if (!out) throw InputError("cannot open " + args.out + " for writing");
  out << "trial";
  for (int i = 0; i < policy.num_states(); ++i) out << ",x0_" << i;
  out << ",termination,final_cost,terminal_speed,class\n";
  for (std::size_t i = 0; i < result.details.size(); ++i) {
    const auto& t = result.details[i];
    out << i;
    for (Eigen::Index j = 0; j < t.x0.size(); ++j) out << "," << number(t.x0(j));
    out << "," << to_string(t.termination) << "," << number(t.final_cost) << ","
        << number(t.terminal_speed) << "," << (t.success ? "green" : "red") << "\n";
  }
  out.close();

  if (result.trials == 0) {
    std::cout << "no trials\n";
  } else {
    std::cout << "deadband " << (args.deadband ? "on" : "off") << ": "
              << result.successes << "/" << result.trials << " succeeded, fraction "
              << result.fraction << ", 95% Wilson [" << result.wilson.low << ", "
              << result.wilson.high << "]\n";
  }
  manifest.output(args.out);
  manifest.write(args.out);
  return 0;
}

// plot

struct PlotArgs {
  ScenarioOptions scenario;
  std::vector<std::string> funnels;
  std::string rho_out;
  std::string slice_out;
  std::string axes = "0,1";
  std::string policy;
  bool grid = false;
};

int run_plot(const PlotArgs& args) {
  Manifest manifest("plot");
  if (args.funnels.empty()) throw ConfigError("plot: at least one --funnel is required");
  if (args.rho_out.empty() && args.slice_out.empty()) {
    throw ConfigError("plot: nothing to do; pass --rho-out and/or --slice-out");
  }
  std::vector<Funnel> funnels;
  for (const auto& path : args.funnels) {
    funnels.push_back(read_funnel_json(path));
    manifest.input(path);
  }
  std::vector<fs::path> written;

  if (!args.rho_out.empty()) {
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"};
    std::vector<RhoSeries> series;
    for (std::size_t i = 0; i < funnels.size(); ++i) {
      series.push_back({fs::path(args.funnels[i]).stem().string(), funnels[i].rho,
                        colors[i % 5]});
    }
    write_rho_svg(series, args.rho_out);
    written.emplace_back(args.rho_out);
  }

  if (!args.slice_out.empty()) {
    const Funnel& funnel = funnels.front();
    const auto axes = parse_axes(args.axes);
    std::vector<Overlay> overlays;
    if (args.grid) {
      if (args.policy.empty()) throw ConfigError("plot: --grid needs --policy");
      const Scenario s = args.scenario.load(&manifest);
      const TvlqrPolicy policy = read_policy_json(args.policy);
      manifest.input(args.policy);
      const double rho_f = funnel.outlet();
      for (const auto& offset : grid_offsets()) {
        Eigen::VectorXd x0 = policy.nominal.states.col(0);
        x0.head<2>() += offset;
        const RolloutResult r = rollout(*s.system, policy, x0, rollout_config(s));
        Overlay overlay;
        for (Eigen::Index k = 0; k < r.states.cols(); ++k) {
          overlay.points.emplace_back(r.states(axes.first, k), r.states(axes.second, k));
        }
        const bool in = r.completed() && r.cost_to_go.back() < rho_f;
        overlay.color = in ? "#1f77b4" : "#d62728";
        overlays.push_back(std::move(overlay));
      }
    }
    int finite = 0;
    for (int k = 0; k + 1 < funnel.num_knots(); ++k) finite += std::isfinite(funnel.rho[k]);
    if (finite == 0) {
      std::cout << "notice: " << args.funnels.front()
                << " has no finite threshold before the outlet; no slice plot written\n";
    } else if (const int skipped = write_slice_svg(funnel, axes, overlays, args.slice_out);
               skipped == funnel.num_knots()) {
      std::cout << "notice: every knot of " << args.funnels.front()
                << " is unbounded; no slice plot written\n";
    } else {
      if (skipped > 0) {
        std::cout << "notice: skipped " << skipped << " unbounded knots\n";
      }
      written.emplace_back(args.slice_out);
    }
  }

  for (const auto& path : written) {
    manifest.output(path);
    std::cout << "wrote " << path.string() << "\n";
  }
  if (!written.empty()) manifest.write(written.front());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory optimization, TVLQR and simulation-based funnel estimation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(TVROA_VERSION));

  OptimizeArgs optimize_args;
  auto* optimize_cmd = app.add_subcommand("optimize", "Solve the trajectory optimization problem");
  optimize_args.scenario.add(optimize_cmd);
  optimize_cmd->add_option("--out", optimize_args.out, "Trajectory CSV");

  SynthesizeArgs synthesize_args;
  auto* synthesize_cmd = app.add_subcommand("synthesize", "TVLQR policy along a trajectory");
  synthesize_args.scenario.add(synthesize_cmd);
  synthesize_cmd->add_option("--trajectory", synthesize_args.trajectory, "Trajectory CSV");
  synthesize_cmd->add_option("--qf", synthesize_args.qf, "Terminal weight: care for S_inf")
      ->check(CLI::IsMember({"care"}));
  synthesize_cmd->add_option("--out", synthesize_args.out, "Policy JSON");

  EstimateArgs estimate_args;
  auto* estimate_cmd = app.add_subcommand("estimate", "Estimate the funnel by simulation");
  estimate_args.scenario.add(estimate_cmd);
  estimate_cmd->add_option("--policy", estimate_args.policy, "Policy JSON");
  estimate_cmd->add_option("--out", estimate_args.out, "Funnel JSON");
  estimate_cmd->add_option("--log", estimate_args.log, "JSON-lines simulation log");
  estimate_cmd->add_option("--rho-csv", estimate_args.rho_csv, "Threshold per knot");
  estimate_cmd->add_option("--seed", estimate_args.seed, "Random seed");
  estimate_cmd->add_option("--alpha", estimate_args.alpha, "Fuel multiplier, or inf");
  estimate_cmd->add_option("--sims", estimate_args.sims, "Number of simulations")
      ->check(CLI::NonNegativeNumber);
  estimate_cmd->add_flag("--parallel", estimate_args.parallel, "Batch-parallel estimation");
  estimate_cmd->add_option("--threads", estimate_args.threads, "Worker threads");

  VerifyArgs verify_args;
  auto* verify_cmd = app.add_subcommand("verify", "Roll out fresh inlet samples");
  verify_args.scenario.add(verify_cmd);
  verify_cmd->add_option("--policy", verify_args.policy, "Policy JSON");
  verify_cmd->add_option("--funnel", verify_args.funnel, "Funnel JSON");
  verify_cmd->add_option("--out", verify_args.out, "Per-trial CSV");
  verify_cmd->add_option("--n-check", verify_args.n_check, "Number of trials");
  verify_cmd->add_option("--seed", verify_args.seed, "Random seed");
  verify_cmd->add_flag("--deadband", verify_args.deadband, "Enable the actuator deadband");

  PlotArgs plot_args;
  auto* plot_cmd = app.add_subcommand("plot", "SVG figures");
  plot_args.scenario.add(plot_cmd);
  plot_cmd->add_option("--funnel", plot_args.funnels, "Funnel JSON (repeatable)");
  plot_cmd->add_option("--rho-out", plot_args.rho_out, "Threshold-versus-knot SVG");
  plot_cmd->add_option("--slice-out", plot_args.slice_out, "Funnel slice SVG");
  plot_cmd->add_option("--axes", plot_args.axes, "State indices of the slice");
  plot_cmd->add_option("--policy", plot_args.policy, "Policy JSON for --grid");
  plot_cmd->add_flag("--grid", plot_args.grid, "Overlay the 5x5 grid of initial offsets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*optimize_cmd) return run_optimize(optimize_args);
    if (*synthesize_cmd) return run_synthesize(synthesize_args);
    if (*estimate_cmd) return run_estimate(estimate_args);
    if (*verify_cmd) return run_verify(verify_args);
    if (*plot_cmd) return run_plot(plot_args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const SolverFailure& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kNumericalError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumericalError;
  } catch (const EstimationError& e) {
    std::cerr << "estimation failure: " << e.what() << "\n";
    return kNumericalError;
  }
  return kUsageError;
}
