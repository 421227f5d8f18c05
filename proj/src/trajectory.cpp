#include "tvroa/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

namespace tvroa {

void Trajectory::validate() const {
  if (!(dt > 0) || !std::isfinite(dt)) {
    throw InputError("Trajectory: time step must be positive");
  }
  if (num_knots() < 2) throw InputError("Trajectory: needs at least two knots");
  if (num_states() % 2 != 0) {
    throw InputError("Trajectory: state dimension must be even (q, qdot)");
  }
  if (inputs.cols() != num_intervals()) {
    throw InputError("Trajectory: expected one control per interval");
  }
}

int interval_index(const Trajectory& trajectory, double t) {
  const int k = static_cast<int>(std::floor(t / trajectory.dt));
  return std::clamp(k, 0, trajectory.num_intervals() - 1);
}

Eigen::VectorXd interpolate_state(const Trajectory& trajectory, int k,
                                  double t) {
  const int nq = trajectory.num_positions();
  const double h = trajectory.dt;
  const double s = (t - trajectory.time(k)) / h;
  const auto x0 = trajectory.states.col(k);
  const auto x1 = trajectory.states.col(k + 1);

  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1;
  const double h10 = s3 - 2 * s2 + s;
  const double h01 = -2 * s3 + 3 * s2;
  const double h11 = s3 - s2;

  Eigen::VectorXd x(2 * nq);
  x.head(nq) = h00 * x0.head(nq) + h10 * h * x0.tail(nq) + h01 * x1.head(nq) +
               h11 * h * x1.tail(nq);
  x.tail(nq) = (1 - s) * x0.tail(nq) + s * x1.tail(nq);
  return x;
}

Eigen::VectorXd interpolate_state(const Trajectory& trajectory, double t) {
  return interpolate_state(trajectory, interval_index(trajectory, t), t);
}

Eigen::VectorXd input_at(const Trajectory& trajectory, double t) {
  if (t >= trajectory.duration()) {
    return Eigen::VectorXd::Zero(trajectory.num_inputs());
  }
  return trajectory.inputs.col(interval_index(trajectory, t));
}

void write_trajectory_csv(const Trajectory& trajectory, std::ostream& out) {
  const int nq = trajectory.num_positions();
  const int nu = trajectory.num_inputs();
  out << "t";
  for (int i = 0; i < nq; ++i) out << ",q" << i;
  for (int i = 0; i < nq; ++i) out << ",qd" << i;
  for (int i = 0; i < nu; ++i) out << ",u" << i;
  out << '\n' << std::setprecision(17);
  for (int k = 0; k < trajectory.num_knots(); ++k) {
    out << trajectory.time(k);
    for (int i = 0; i < 2 * nq; ++i) out << ',' << trajectory.states(i, k);
    for (int i = 0; i < nu; ++i) {
      out << ',';
      if (k < trajectory.num_intervals()) out << trajectory.inputs(i, k);
    }
    out << '\n';
  }
}

void write_trajectory_csv(const Trajectory& trajectory,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  write_trajectory_csv(trajectory, out);
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream stream(line);
  while (std::getline(stream, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_cell(const std::string& cell, int row) {
  std::size_t used = 0;
  double value = 0;
  try {
    value = std::stod(cell, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != cell.size()) {
    throw InputError("trajectory CSV row " + std::to_string(row) +
                     ": not a number: '" + cell + "'");
  }
  return value;
}

}  // namespace

Trajectory read_trajectory_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("trajectory CSV: empty input");
  const auto header = split(line);
  int nq = 0, nqd = 0, nu = 0;
  for (std::size_t i = 1; i < header.size(); ++i) {
    const std::string& name = header[i];
    if (name.rfind("qd", 0) == 0) {
      ++nqd;
    } else if (name.rfind("q", 0) == 0) {
      ++nq;
    } else if (name.rfind("u", 0) == 0) {
      ++nu;
    } else {
      throw InputError("trajectory CSV: unknown column '" + name + "'");
    }
  }
  if (header.empty() || header[0] != "t" || nq != nqd || nq == 0) {
    throw InputError("trajectory CSV: malformed header");
  }
  const std::size_t width = 1 + 2 * nq + nu;

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(split(line));
    if (rows.back().size() != width) {
      throw InputError("trajectory CSV row " + std::to_string(rows.size()) +
                       ": expected " + std::to_string(width) + " columns");
    }
  }
  if (rows.size() < 2) throw InputError("trajectory CSV: need two knots");

  Trajectory traj;
  const int knots = static_cast<int>(rows.size());
  traj.states.resize(2 * nq, knots);
  traj.inputs.resize(nu, knots - 1);
  for (int k = 0; k < knots; ++k) {
    for (int i = 0; i < 2 * nq; ++i) {
      traj.states(i, k) = parse_cell(rows[k][1 + i], k + 1);
    }
    for (int i = 0; i < nu; ++i) {
      const std::string& cell = rows[k][1 + 2 * nq + i];
      if (k + 1 < knots) {
        traj.inputs(i, k) = parse_cell(cell, k + 1);
      } else if (!cell.empty()) {
        throw InputError("trajectory CSV: final row must have blank controls");
      }
    }
  }
  const double t1 = parse_cell(rows[1][0], 2);
  const double t0 = parse_cell(rows[0][0], 1);
  traj.dt = (parse_cell(rows.back()[0], knots) - t0) / (knots - 1);
  if (std::abs((t1 - t0) - traj.dt) > 1e-9 * (1 + traj.dt)) {
    throw InputError("trajectory CSV: knots are not uniformly spaced");
  }
  traj.validate();
  return traj;
}

Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open trajectory file " + path.string());
  return read_trajectory_csv(in);
}

}  // namespace tvroa
