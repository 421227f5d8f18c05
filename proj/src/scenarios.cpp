#include "tvroa/scenarios.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace tvroa {

namespace {

Eigen::VectorXd vec(std::initializer_list<double> values) {
  Eigen::VectorXd v(values.size());
  int i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

Eigen::MatrixXd diag(std::initializer_list<double> values) {
  return vec(values).asDiagonal();
}

Link rod(double mass, double length) {
  return {mass, mass * length * length / 12.0, length, 0.5 * length};
}

// Rebuilds q0/v0 of a detumble scenario from its model, pose and rate.
void refresh_post_capture(Scenario& s) {
  const Eigen::VectorXd x0 = post_capture_state(*s.model, s.grasp_pose, s.omega0);
  const int nq = s.model->num_positions();
  s.bounds.q0 = x0.head(nq);
  s.bounds.v0 = x0.tail(nq);
}

}  // namespace

Eigen::VectorXd post_capture_state(const MultibodyModel& model,
                                   const Eigen::VectorXd& grasp_pose,
                                   double omega0) {
  require_dim(grasp_pose.size(), model.num_joints(), "post_capture_state: pose");
  const int nq = model.num_positions();
  Eigen::VectorXd q = Eigen::VectorXd::Zero(nq);
  q.tail(model.num_joints()) = grasp_pose;
  q.head<2>() -= center_of_mass(model, q);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(nq);
  v(0) = -omega0 * q(1);
  v(1) = omega0 * q(0);
  v(2) = omega0;
  Eigen::VectorXd x(2 * nq);
  x << q, v;
  return x;
}

double assembly_inertia(const MultibodyModel& model, const Eigen::VectorXd& q) {
  const Eigen::Vector2d c = center_of_mass(model, q);
  const auto kin = chain_kinematics<double>(model, q);
  double I = model.base_inertia() +
             model.base_mass() * (kin.base - c).squaredNorm();
  for (int i = 0; i < model.num_joints(); ++i) {
    const Link& body = model.bodies()[i];
    I += body.inertia + body.mass * (kin.com[i] - c).squaredNorm();
  }
  return I;
}

std::vector<Eigen::Vector2d> grid_offsets(int n, double side) {
  if (n < 1) throw InputError("grid_offsets: n must be >= 1");
  std::vector<Eigen::Vector2d> out;
  const double step = n > 1 ? side / (n - 1) : 0.0;
  const double start = n > 1 ? -0.5 * side : 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      out.emplace_back(start + i * step, start + j * step);
    }
  }
  return out;
}

Scenario detumble_scenario() {
  Scenario s;
  s.name = "detumble";
  // 2 m × 2 m chaser body; arm links as slender rods.
  const double base_mass = 100;
  const double base_inertia = base_mass * (2.0 * 2.0 + 2.0 * 2.0) / 12.0;
  const std::vector<Link> links{rod(10, 0.9), rod(8, 0.7), rod(4, 0.3)};
  const Payload target{50, 3.0, 0.6};
  s.model = MultibodyModel(base_mass, base_inertia, Eigen::Vector2d(1.0, 0.0),
                           links, target);
  s.system = std::make_shared<FloatingBaseSystem>(*s.model);
  s.omega0 = 5.0 * M_PI / 180.0;
  s.grasp_pose = vec({0.4, -0.8, 0.4});

  s.num_intervals = 100;
  s.initial_dt = 0.1;
  s.weights.time_weight = 0.01;
  s.weights.input_weight =
      diag({1 / 100.0, 1 / 100.0, 1 / 2500.0, 1 / 2500.0, 1 / 2500.0, 1 / 2500.0});
  s.weights.terminal_weight = Eigen::MatrixXd::Zero(12, 12);
  s.bounds.u_max = vec({10, 10, 50, 50, 50, 50});
  s.bounds.u_min = -s.bounds.u_max;
  s.bounds.q_max = vec({kInf, kInf, kInf, M_PI, M_PI, M_PI});
  s.bounds.q_min = -s.bounds.q_max;
  s.bounds.vf = Eigen::VectorXd::Zero(6);
  refresh_post_capture(s);

  s.Q = diag({10, 10, 100, 10, 10, 10, 10, 10, 100, 10, 10, 10});
  s.R = diag({0.1, 0.1, 0.01, 0.01, 0.01, 0.01});

  s.estimation.num_simulations = 1000;
  s.estimation.goal_deviation =
      vec({0.015, 0.015, 0.006, 0.006, 0.006, 0.006, 0.006, 0.006, 0.003, 0.003, 0.003, 0.003});
  s.estimation.rollout.dt = 1e-3;
  s.estimation.rollout.u_min = s.bounds.u_min;
  s.estimation.rollout.u_max = s.bounds.u_max;
  s.deadband = vec({0.5, 0.5, 1.0, 1.0, 1.0, 1.0});
  return s;
}

Scenario freeflyer_scenario() {
  Scenario s;
  s.name = "freeflyer";
  s.model = MultibodyModel(4.26, 0.064);
  s.system = std::make_shared<FloatingBaseSystem>(*s.model);

  s.num_intervals = 100;
  s.initial_dt = 0.15;
  s.weights.time_weight = 1.0;
  s.weights.input_weight = Eigen::MatrixXd::Identity(3, 3);
  s.weights.terminal_weight = Eigen::MatrixXd::Zero(6, 6);
  s.bounds.u_max = vec({1.0, 1.0, 0.1});
  s.bounds.u_min = -s.bounds.u_max;
  s.bounds.q0 = vec({2, 2, 0});
  s.bounds.v0 = Eigen::VectorXd::Zero(3);
  s.bounds.qf = vec({2, 2, 2 * M_PI});
  s.bounds.vf = Eigen::VectorXd::Zero(3);
  s.bounds.waypoints = {{30, vec({3, 1, M_PI / 2})},
                        {50, vec({4, 2, M_PI})},
                        {70, vec({3, 3, 3 * M_PI / 2})}};

  s.Q = diag({50, 50, 0.01, 50, 50, 0.001});
  s.R = diag({1, 1, 10});

  s.estimation.num_simulations = 1000;
  s.estimation.goal_deviation = vec({0.02, 0.02, 0.04, 0.01, 0.01, 0.02});
  s.estimation.rollout.dt = 1e-3;
  s.estimation.rollout.u_min = s.bounds.u_min;
  s.estimation.rollout.u_max = s.bounds.u_max;
  s.deadband = vec({0.45, 0.45, 0.05});
  return s;
}

Scenario double_integrator_scenario() {
  Scenario s;
  s.name = "double_integrator";
  s.system = std::make_shared<DoubleIntegrator>(1.0, 1);
  s.num_intervals = 40;
  s.initial_dt = 0.1;
  s.weights.time_weight = 0.0;
  s.weights.input_weight = Eigen::MatrixXd::Identity(1, 1);
  s.weights.terminal_weight = Eigen::MatrixXd::Zero(2, 2);
  s.bounds.u_max = vec({0.5});
  s.bounds.u_min = -s.bounds.u_max;
  s.bounds.q0 = vec({0});
  s.bounds.v0 = vec({0});
  s.bounds.qf = vec({1});
  s.bounds.vf = vec({0});
  s.bounds.dt_min = s.bounds.dt_max = 0.1;

  s.Q = Eigen::MatrixXd::Identity(2, 2);
  s.R = Eigen::MatrixXd::Constant(1, 1, 30.0);

  s.estimation.num_simulations = 1000;
  s.estimation.goal_deviation = vec({0.1, 0.1});
  s.estimation.rollout.dt = 1e-2;
  s.estimation.rollout.u_min = s.bounds.u_min;
  s.estimation.rollout.u_max = s.bounds.u_max;
  s.deadband = vec({0.05});
  return s;
}

Scenario builtin_scenario(const std::string& name) {
  if (name == "detumble") return detumble_scenario();
  if (name == "freeflyer") return freeflyer_scenario();
  if (name == "double_integrator") return double_integrator_scenario();
  throw ConfigError("unknown scenario '" + name +
                    "' (expected detumble, freeflyer or double_integrator)");
}

// ---------------------------------------------------------------------------
// Scenario files.

namespace {

using Json = nlohmann::json;

class ConfigReader {
 public:
  ConfigReader(const std::string& text, std::string source)
      : text_(text), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    throw ConfigError(source_ + locate(key) + ": " + key + ": " + message);
  }

  double number(const Json& j, const std::string& key) const {
    if (j.is_string()) {
      const auto s = j.get<std::string>();
      if (s == "inf") return kInf;
      if (s == "-inf") return -kInf;
    }
    if (!j.is_number()) fail(key, "expected a number");
    return j.get<double>();
  }

  int integer(const Json& j, const std::string& key) const {
    if (!j.is_number_integer()) fail(key, "expected an integer");
    return j.get<int>();
  }

  bool boolean(const Json& j, const std::string& key) const {
    if (!j.is_boolean()) fail(key, "expected true or false");
    return j.get<bool>();
  }

  Eigen::VectorXd vector(const Json& j, const std::string& key,
                         Eigen::Index size = -1) const {
    if (!j.is_array()) fail(key, "expected an array of numbers");
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v(i) = number(j[i], key);
    if (size >= 0 && v.size() != size) {
      fail(key, "expected " + std::to_string(size) + " entries, got " +
                    std::to_string(v.size()));
    }
    return v;
  }

  /// A flat array is a diagonal; an array of rows is a full matrix.
  Eigen::MatrixXd matrix(const Json& j, const std::string& key,
                         Eigen::Index size) const {
    if (!j.is_array() || j.empty()) fail(key, "expected an array");
    if (!j[0].is_array()) return vector(j, key, size).asDiagonal();
    if (static_cast<Eigen::Index>(j.size()) != size) {
      fail(key, "expected " + std::to_string(size) + " rows");
    }
    Eigen::MatrixXd M(size, size);
    for (Eigen::Index r = 0; r < size; ++r) M.row(r) = vector(j[r], key, size);
    return M;
  }

 private:
  // " (line L, column C)" of the first occurrence of the quoted key.
  std::string locate(const std::string& key) const {
    const std::string leaf = key.substr(key.find_last_of('.') + 1);
    const auto pos = text_.find('"' + leaf + '"');
    if (pos == std::string::npos) return "";
    const auto line = std::count(text_.begin(), text_.begin() + pos, '\n') + 1;
    const auto start = text_.rfind('\n', pos);
    const auto column = pos - (start == std::string::npos ? 0 : start + 1) + 1;
    return " (line " + std::to_string(line) + ", column " +
           std::to_string(column) + ")";
  }

  const std::string& text_;
  std::string source_;
};

void check_known(const ConfigReader& r, const Json& object,
                 const std::string& prefix,
                 std::initializer_list<const char*> keys) {
  for (const auto& item : object.items()) {
    bool known = false;
    for (const char* k : keys) known = known || item.key() == k;
    if (!known) r.fail(prefix + item.key(), "unknown key");
  }
}

Json object_at(const ConfigReader& r, const Json& parent, const char* key) {
  const Json& j = parent.at(key);
  if (!j.is_object()) r.fail(key, "expected an object");
  return j;
}

void apply_model(const ConfigReader& r, const Json& j, Scenario& s) {
  check_known(r, j, "model.",
              {"base_mass", "base_inertia", "mount", "links", "payload"});
  if (!s.model) r.fail("model", "this scenario has no multibody model");
  const MultibodyModel& m = *s.model;
  const double base_mass =
      j.contains("base_mass") ? r.number(j["base_mass"], "model.base_mass") : m.base_mass();
  const double base_inertia = j.contains("base_inertia")
                                  ? r.number(j["base_inertia"], "model.base_inertia")
                                  : m.base_inertia();
  Eigen::Vector2d mount = m.mount();
  if (j.contains("mount")) mount = r.vector(j["mount"], "model.mount", 2);
  std::vector<Link> links = m.links();
  if (j.contains("links")) {
    if (!j["links"].is_array()) r.fail("model.links", "expected an array");
    links.clear();
    for (const auto& l : j["links"]) {
      check_known(r, l, "model.links.", {"mass", "inertia", "length", "com_offset"});
      Link link;
      link.mass = r.number(l.at("mass"), "model.links.mass");
      link.length = r.number(l.at("length"), "model.links.length");
      link.inertia = l.contains("inertia")
                         ? r.number(l["inertia"], "model.links.inertia")
                         : link.mass * link.length * link.length / 12.0;
      link.com_offset = l.contains("com_offset")
                            ? r.number(l["com_offset"], "model.links.com_offset")
                            : 0.5 * link.length;
      links.push_back(link);
    }
  }
  std::optional<Payload> payload = m.payload();
  if (j.contains("payload")) {
    if (j["payload"].is_null()) {
      payload.reset();
    } else {
      const Json& p = j["payload"];
      check_known(r, p, "model.payload.", {"mass", "inertia", "com_offset"});
      payload = Payload{r.number(p.at("mass"), "model.payload.mass"),
                        r.number(p.at("inertia"), "model.payload.inertia"),
                        r.number(p.at("com_offset"), "model.payload.com_offset")};
    }
  }
  try {
    s.model = MultibodyModel(base_mass, base_inertia, mount, links, payload);
  } catch (const ConfigError& e) {
    r.fail("model", e.what());
  }
  s.system = std::make_shared<FloatingBaseSystem>(*s.model);
}

void apply_trajopt(const ConfigReader& r, const Json& j, Scenario& s) {
  check_known(r, j, "trajopt.",
              {"intervals", "initial_dt", "dt_min", "dt_max", "time_weight",
               "input_weight", "terminal_weight", "u_min", "u_max", "q_min",
               "q_max", "v_min", "v_max", "q0", "v0", "qf", "vf", "waypoints",
               "max_outer_iterations", "max_inner_iterations"});
  const int nq = s.system->num_positions();
  const int nu = s.system->num_inputs();
  Bounds& b = s.bounds;
  auto opt_vec = [&](const char* key, Eigen::Index n) -> std::optional<Eigen::VectorXd> {
    if (!j.contains(key)) return std::nullopt;
    if (j[key].is_null()) return Eigen::VectorXd();
    return r.vector(j[key], std::string("trajopt.") + key, n);
  };
  if (j.contains("intervals")) s.num_intervals = r.integer(j["intervals"], "trajopt.intervals");
  if (j.contains("initial_dt")) s.initial_dt = r.number(j["initial_dt"], "trajopt.initial_dt");
  if (j.contains("dt_min")) b.dt_min = r.number(j["dt_min"], "trajopt.dt_min");
  if (j.contains("dt_max")) b.dt_max = r.number(j["dt_max"], "trajopt.dt_max");
  if (j.contains("time_weight")) {
    s.weights.time_weight = r.number(j["time_weight"], "trajopt.time_weight");
  }
  if (j.contains("input_weight")) {
    s.weights.input_weight = r.matrix(j["input_weight"], "trajopt.input_weight", nu);
  }
  if (j.contains("terminal_weight")) {
    s.weights.terminal_weight =
        r.matrix(j["terminal_weight"], "trajopt.terminal_weight", 2 * nq);
  }
  if (auto v = opt_vec("u_min", nu)) b.u_min = *v;
  if (auto v = opt_vec("u_max", nu)) b.u_max = *v;
  if (auto v = opt_vec("q_min", nq)) b.q_min = *v;
  if (auto v = opt_vec("q_max", nq)) b.q_max = *v;
  if (auto v = opt_vec("v_min", nq)) b.v_min = *v;
  if (auto v = opt_vec("v_max", nq)) b.v_max = *v;
  if (auto v = opt_vec("q0", nq)) b.q0 = *v;
  if (auto v = opt_vec("v0", nq)) b.v0 = *v;
  if (auto v = opt_vec("qf", nq)) {
    b.qf = v->size() ? std::optional<Eigen::VectorXd>(*v) : std::nullopt;
  }
  if (auto v = opt_vec("vf", nq)) {
    b.vf = v->size() ? std::optional<Eigen::VectorXd>(*v) : std::nullopt;
  }
  if (j.contains("waypoints")) {
    if (!j["waypoints"].is_array()) r.fail("trajopt.waypoints", "expected an array");
    b.waypoints.clear();
    for (const auto& w : j["waypoints"]) {
      check_known(r, w, "trajopt.waypoints.", {"knot", "q"});
      b.waypoints.push_back({r.integer(w.at("knot"), "trajopt.waypoints.knot"),
                             r.vector(w.at("q"), "trajopt.waypoints.q", nq)});
    }
  }
  if (j.contains("max_outer_iterations")) {
    s.solver.max_outer_iterations =
        r.integer(j["max_outer_iterations"], "trajopt.max_outer_iterations");
  }
  if (j.contains("max_inner_iterations")) {
    s.solver.max_inner_iterations =
        r.integer(j["max_inner_iterations"], "trajopt.max_inner_iterations");
  }
}

void apply_lqr(const ConfigReader& r, const Json& j, Scenario& s) {
  check_known(r, j, "lqr.", {"Q", "R", "Qf"});
  const int nx = s.system->num_states();
  if (j.contains("Q")) s.Q = r.matrix(j["Q"], "lqr.Q", nx);
  if (j.contains("R")) s.R = r.matrix(j["R"], "lqr.R", s.system->num_inputs());
  if (j.contains("Qf")) {
    if (j["Qf"].is_string()) {
      if (j["Qf"].get<std::string>() != "care") r.fail("lqr.Qf", "expected \"care\" or a matrix");
      s.Qf.reset();
    } else {
      s.Qf = r.matrix(j["Qf"], "lqr.Qf", nx);
    }
  }
}

void apply_simulation(const ConfigReader& r, const Json& j, Scenario& s) {
  check_known(r, j, "simulation.", {"dt", "saturate", "deadband", "divergence_limit"});
  RolloutConfig& rc = s.estimation.rollout;
  const int nu = s.system->num_inputs();
  if (j.contains("dt")) rc.dt = r.number(j["dt"], "simulation.dt");
  if (j.contains("saturate")) {
    if (r.boolean(j["saturate"], "simulation.saturate")) {
      rc.u_min = s.bounds.u_min;
      rc.u_max = s.bounds.u_max;
    } else {
      rc.u_min.resize(0);
      rc.u_max.resize(0);
    }
  }
  if (j.contains("deadband")) s.deadband = r.vector(j["deadband"], "simulation.deadband", nu);
  if (j.contains("divergence_limit")) {
    rc.divergence_limit = r.number(j["divergence_limit"], "simulation.divergence_limit");
  }
}

void apply_estimation(const ConfigReader& r, const Json& j, Scenario& s) {
  check_known(r, j, "estimation.",
              {"sims", "goal_deviation", "alpha", "seed", "bootstrap_factor",
               "parallel", "threads", "batch_size"});
  EstimationConfig& e = s.estimation;
  if (j.contains("sims")) e.num_simulations = r.integer(j["sims"], "estimation.sims");
  if (j.contains("goal_deviation")) {
    e.goal_deviation = r.vector(j["goal_deviation"], "estimation.goal_deviation",
                                s.system->num_states());
  }
  if (j.contains("alpha")) e.fuel_alpha = r.number(j["alpha"], "estimation.alpha");
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) r.fail("estimation.seed", "expected a non-negative integer");
    e.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("bootstrap_factor")) {
    e.bootstrap_factor = r.number(j["bootstrap_factor"], "estimation.bootstrap_factor");
  }
  if (j.contains("parallel")) e.parallel = r.boolean(j["parallel"], "estimation.parallel");
  if (j.contains("threads")) e.threads = r.integer(j["threads"], "estimation.threads");
  if (j.contains("batch_size")) e.batch_size = r.integer(j["batch_size"], "estimation.batch_size");
}

}  // namespace

Scenario parse_scenario(const std::string& text, const std::string& source) {
  Json j;
  try {
    j = Json::parse(text, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    const std::size_t byte = std::min<std::size_t>(e.byte, text.size());
    const auto before = text.substr(0, byte > 0 ? byte - 1 : 0);
    const auto line = std::count(before.begin(), before.end(), '\n') + 1;
    const auto start = before.rfind('\n');
    const auto column = before.size() - (start == std::string::npos ? 0 : start + 1) + 1;
    throw ConfigError(source + " (line " + std::to_string(line) + ", column " +
                      std::to_string(column) + "): syntax error: " + e.what());
  }
  const ConfigReader r(text, source);
  if (!j.is_object()) r.fail("<root>", "expected a JSON object");
  check_known(r, j, "",
              {"base", "name", "model", "grasp_pose", "omega0", "trajopt", "lqr",
               "simulation", "estimation"});
  if (!j.contains("base") || !j["base"].is_string()) {
    r.fail("base", "required: the name of a built-in scenario");
  }
  Scenario s;
  try {
    s = builtin_scenario(j["base"].get<std::string>());
  } catch (const ConfigError& e) {
    r.fail("base", e.what());
  }
  try {
    if (j.contains("name")) s.name = j["name"].get<std::string>();
    bool recapture = false;
    if (j.contains("model")) {
      apply_model(r, object_at(r, j, "model"), s);
      recapture = true;
    }
    if (j.contains("grasp_pose")) {
      if (!s.model) r.fail("grasp_pose", "this scenario has no arm");
      s.grasp_pose = r.vector(j["grasp_pose"], "grasp_pose", s.model->num_joints());
      recapture = true;
    }
    if (j.contains("omega0")) {
      s.omega0 = r.number(j["omega0"], "omega0");
      recapture = true;
    }
    if (recapture && s.name == "detumble") refresh_post_capture(s);
    if (j.contains("trajopt")) apply_trajopt(r, object_at(r, j, "trajopt"), s);
    // Saturation follows the actuation bounds unless configured otherwise.
    if (s.estimation.rollout.u_min.size()) {
      s.estimation.rollout.u_min = s.bounds.u_min;
      s.estimation.rollout.u_max = s.bounds.u_max;
    }
    if (j.contains("lqr")) apply_lqr(r, object_at(r, j, "lqr"), s);
    if (j.contains("simulation")) apply_simulation(r, object_at(r, j, "simulation"), s);
    if (j.contains("estimation")) apply_estimation(r, object_at(r, j, "estimation"), s);
  } catch (const Json::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
  // Surface inconsistent bounds now rather than at solve time.
  try {
    transcribe(s.system, s.weights, s.bounds, s.num_intervals, s.initial_dt);
  } catch (const ConfigError& e) {
    r.fail("trajopt", e.what());
  }
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_scenario(buffer.str(), path.string());
}

TrajoptResult optimize(const Scenario& scenario,
                       const std::optional<Trajectory>& initial_guess) {
  const DirectTranscription program =
      transcribe(scenario.system, scenario.weights, scenario.bounds,
                 scenario.num_intervals, scenario.initial_dt);
  return solve(program, initial_guess, scenario.solver);
}

Trajectory reference_trajectory(const Scenario& scenario,
                                const Trajectory& solved) {
  return resimulate(*scenario.system, solved, scenario.estimation.rollout.dt);
}

TvlqrPolicy synthesize(const Scenario& scenario, const Trajectory& reference) {
  return synthesize(*scenario.system, reference, scenario.Q, scenario.R,
                    scenario.Qf);
}

RolloutConfig rollout_config(const Scenario& scenario, bool deadband) {
  RolloutConfig config = scenario.estimation.rollout;
  config.deadband = deadband ? scenario.deadband : Eigen::VectorXd();
  return config;
}

}  // namespace tvroa
