#include "tvroa/funnel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "json_util.hpp"
#include "tvroa/tvlqr.hpp"

namespace tvroa {

void Funnel::validate() const {
  const int n = num_knots();
  if (n < 1) throw InputError("Funnel: no knots");
  if (static_cast<int>(knot_times.size()) != n ||
      static_cast<int>(S.size()) != n || centers.cols() != n) {
    throw InputError("Funnel: knot_times, S, rho and centers must agree");
  }
  for (int k = 0; k < n; ++k) {
    if (S[k].rows() != num_states() || S[k].cols() != num_states()) {
      throw InputError("Funnel: S_" + std::to_string(k) + " has wrong size");
    }
    if ((S[k] - S[k].transpose()).cwiseAbs().maxCoeff() >
        1e-9 * (1 + S[k].cwiseAbs().maxCoeff())) {
      throw InputError("Funnel: S_" + std::to_string(k) + " not symmetric");
    }
    if (!(rho[k] > 0)) {
      throw InputError("Funnel: rho_" + std::to_string(k) + " must be > 0");
    }
  }
}

Funnel make_funnel(const TvlqrPolicy& policy, double initial, double outlet) {
  Funnel funnel;
  const int n = policy.num_knots();
  funnel.knot_times.resize(n);
  for (int k = 0; k < n; ++k) funnel.knot_times[k] = policy.nominal.time(k);
  funnel.centers = policy.nominal.states;
  funnel.S = policy.S;
  funnel.rho.assign(n, initial);
  funnel.rho.back() = outlet;
  return funnel;
}

bool contains(const Funnel& funnel, int k, const Eigen::VectorXd& x) {
  if (k < 0 || k >= funnel.num_knots()) {
    throw InputError("contains: knot " + std::to_string(k) + " out of range");
  }
  require_dim(x.size(), funnel.num_states(), "contains: x");
  if (std::isinf(funnel.rho[k])) return true;
  return quadratic_form(funnel.S[k], x - funnel.centers.col(k)) <
         funnel.rho[k];
}

bool Ellipse::contains(const Eigen::Vector2d& p) const {
  const Eigen::Vector2d d = p - center;
  return d.dot(shape * d) < rho;
}

std::vector<Eigen::Vector2d> Ellipse::boundary(int points) const {
  // p = c + √ρ L⁻ᵀ (cos φ, sin φ) with shape = L Lᵀ.
  const Eigen::LLT<Eigen::Matrix2d> llt(shape);
  std::vector<Eigen::Vector2d> out;
  out.reserve(points + 1);
  for (int i = 0; i <= points; ++i) {
    const double phi = 2.0 * M_PI * i / points;
    const Eigen::Vector2d unit(std::cos(phi), std::sin(phi));
    out.push_back(center + std::sqrt(rho) *
                               llt.matrixU().solve(unit));
  }
  return out;
}

Ellipse project(const Funnel& funnel, int k, std::pair<int, int> axes) {
  if (k < 0 || k >= funnel.num_knots()) {
    throw InputError("project: knot " + std::to_string(k) + " out of range");
  }
  const auto [a, b] = axes;
  if (a < 0 || b < 0 || a >= funnel.num_states() ||
      b >= funnel.num_states() || a == b) {
    throw InputError("project: invalid axes");
  }
  if (std::isinf(funnel.rho[k])) {
    throw InputError("project: rho at knot " + std::to_string(k) +
                     " is infinite (never shrunk); skip this knot");
  }
  Ellipse e;
  e.center << funnel.centers(a, k), funnel.centers(b, k);
  e.shape << funnel.S[k](a, a), funnel.S[k](a, b), funnel.S[k](b, a),
      funnel.S[k](b, b);
  e.rho = funnel.rho[k];
  return e;
}

std::string to_string(Containment containment) {
  switch (containment) {
    case Containment::kContained:
      return "contained";
    case Containment::kNotContained:
      return "not-contained";
    case Containment::kIndeterminate:
      return "indeterminate";
  }
  return "unknown";
}

namespace {

double max_eigenvalue(const Eigen::MatrixXd& M) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(M, Eigen::EigenvaluesOnly)
      .eigenvalues()
      .maxCoeff();
}

// λ_max(P_a⁻¹ P_b) through the Cholesky factor of P_a.
double generalized_max_eigenvalue(const Eigen::MatrixXd& Pa,
                                  const Eigen::MatrixXd& Pb) {
  const Eigen::LLT<Eigen::MatrixXd> llt(Pa);
  if (llt.info() != Eigen::Success) {
    throw InputError("composable: upstream outlet shape is not positive definite");
  }
  const Eigen::MatrixXd Linv_Pb =
      llt.matrixL().solve(Pb);
  const Eigen::MatrixXd C =
      llt.matrixL().solve(Eigen::MatrixXd(Linv_Pb.transpose()));
  return max_eigenvalue(0.5 * (C + C.transpose()));
}

}  // namespace

CompositionReport composable(const Funnel& upstream, const Funnel& downstream) {
  require_dim(downstream.num_states(), upstream.num_states(),
              "composable: state dimension");
  CompositionReport report;
  const double rho_a = upstream.outlet();
  const double rho_b = downstream.inlet();
  const Eigen::VectorXd d =
      upstream.centers.col(upstream.num_knots() - 1) - downstream.centers.col(0);
  report.concentric = d.cwiseAbs().maxCoeff() == 0.0;
  if (std::isinf(rho_a) || std::isinf(rho_b)) return report;

  const Eigen::MatrixXd Pa = upstream.S.back() / rho_a;
  const Eigen::MatrixXd Pb = downstream.S.front() / rho_b;
  const double lambda = generalized_max_eigenvalue(Pa, Pb);
  if (report.concentric) {
    report.margin = 1.0 - lambda;
  } else {
    // {y | yᵀP_a y ≤ 1} ⊆ {y | (y+d)ᵀP_b(y+d) ≤ 1} iff some τ ≥ 0 makes
    // M(τ) = [[P_b − τP_a, P_b d], [dᵀP_b, dᵀP_b d − 1 + τ]] ⪯ 0.
    // λ_max(M(τ)) is convex in τ; feasible τ lie in [λ, 1 − dᵀP_b d].
    const Eigen::Index n = d.size();
    const Eigen::VectorXd Pbd = Pb * d;
    const double c = d.dot(Pbd);
    auto worst = [&](double tau) {
      Eigen::MatrixXd M(n + 1, n + 1);
      M.topLeftCorner(n, n) = Pb - tau * Pa;
      M.topRightCorner(n, 1) = Pbd;
      M.bottomLeftCorner(1, n) = Pbd.transpose();
      M(n, n) = c - 1.0 + tau;
      return max_eigenvalue(M);
    };
    double lo = lambda, hi = std::max(lambda, 1.0 - c);
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
    double f1 = worst(x1), f2 = worst(x2);
    for (int it = 0; it < 200 && hi - lo > 1e-14 * (1 + hi); ++it) {
      if (f1 <= f2) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - g * (hi - lo);
        f1 = worst(x1);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + g * (hi - lo);
        f2 = worst(x2);
      }
    }
    report.margin = -std::min({f1, f2, worst(lambda), worst(std::max(lambda, 1.0 - c))});
  }
  // Identical ellipsoids give λ = 1 up to roundoff.
  constexpr double kRoundoff = 1e-10;
  report.result = report.margin >= -kRoundoff ? Containment::kContained
                                              : Containment::kNotContained;
  return report;
}

double inlet_volume_proxy(const Funnel& funnel) {
  if (std::isinf(funnel.inlet())) return kInf;
  const Eigen::LLT<Eigen::MatrixXd> llt(funnel.S.front());
  if (llt.info() != Eigen::Success) return kInf;
  // det(ρ S⁻¹)^{1/2} = ρ^{n/2} / Π diag(L).
  const double log_det_L = llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return std::exp(0.5 * funnel.num_states() * std::log(funnel.inlet()) - log_det_L);
}

void write_funnel_json(const Funnel& funnel, const std::filesystem::path& path) {
  using json_util::Json;
  funnel.validate();
  Json j;
  j["version"] = 1;
  j["knot_times"] = funnel.knot_times;
  Json rho = Json::array();
  for (double r : funnel.rho) rho.push_back(json_util::extended_number(r));
  j["rho"] = rho;
  Json S = Json::array();
  for (const auto& s : funnel.S) S.push_back(json_util::to_json(s));
  j["S"] = S;
  j["nominal"] = json_util::to_json(Eigen::MatrixXd(funnel.centers.transpose()));
  j["trajectory_id"] = funnel.trajectory_id;
  json_util::write_file(j, path);
}

Funnel read_funnel_json(const std::filesystem::path& path) {
  const auto j = json_util::read_file(path);
  Funnel funnel;
  try {
    if (j.at("version").get<int>() != 1) {
      throw InputError("unsupported funnel file version");
    }
    funnel.knot_times = j.at("knot_times").get<std::vector<double>>();
    for (const auto& r : j.at("rho")) {
      funnel.rho.push_back(json_util::extended_number_from_json(r));
    }
    for (const auto& s : j.at("S")) {
      funnel.S.push_back(json_util::matrix_from_json(s, "S"));
    }
    funnel.centers =
        json_util::matrix_from_json(j.at("nominal"), "nominal").transpose();
    funnel.trajectory_id = j.at("trajectory_id").get<std::string>();
    funnel.validate();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": malformed funnel file: " + e.what());
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return funnel;
}

// ---------------------------------------------------------------------------
// SVG output.

namespace {

constexpr double kWidth = 640, kHeight = 520, kPad = 56;

struct Frame {
  Eigen::Vector2d lo, hi;
  bool equal_aspect = true;

  void include(const Eigen::Vector2d& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void finalize() {
    Eigen::Vector2d span = (hi - lo).cwiseMax(1e-9);
    lo -= 0.05 * span;
    hi += 0.05 * span;
    if (equal_aspect) {
      span = hi - lo;
      const double sx = span.x() / (kWidth - 2 * kPad);
      const double sy = span.y() / (kHeight - 2 * kPad);
      const double s = std::max(sx, sy);
      const Eigen::Vector2d mid = 0.5 * (lo + hi);
      const Eigen::Vector2d half(0.5 * s * (kWidth - 2 * kPad),
                                 0.5 * s * (kHeight - 2 * kPad));
      lo = mid - half;
      hi = mid + half;
    }
  }
  Eigen::Vector2d map(const Eigen::Vector2d& p) const {
    return {kPad + (p.x() - lo.x()) / (hi.x() - lo.x()) * (kWidth - 2 * kPad),
            kHeight - kPad -
                (p.y() - lo.y()) / (hi.y() - lo.y()) * (kHeight - 2 * kPad)};
  }
};

std::string polyline(const Frame& frame, const std::vector<Eigen::Vector2d>& pts,
                     const std::string& style) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << "<polyline points=\"";
  for (const auto& p : pts) {
    const Eigen::Vector2d s = frame.map(p);
    out << s.x() << ',' << s.y() << ' ';
  }
  out << "\" fill=\"none\" " << style << "/>\n";
  return out.str();
}

void open_svg(std::ostream& out) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << ' '
      << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

void axes_box(std::ostream& out, const Frame& frame, const std::string& xlabel,
              const std::string& ylabel, bool log_y = false) {
  out << "<rect x=\"" << kPad << "\" y=\"" << kPad << "\" width=\""
      << kWidth - 2 * kPad << "\" height=\"" << kHeight - 2 * kPad
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  out << std::setprecision(3);
  for (int i = 0; i <= 4; ++i) {
    const double fx = frame.lo.x() + i * (frame.hi.x() - frame.lo.x()) / 4;
    const double fy = frame.lo.y() + i * (frame.hi.y() - frame.lo.y()) / 4;
    const Eigen::Vector2d px = frame.map({fx, frame.lo.y()});
    const Eigen::Vector2d py = frame.map({frame.lo.x(), fy});
    out << "<text x=\"" << px.x() << "\" y=\"" << kHeight - kPad + 16
        << "\" text-anchor=\"middle\">" << fx << "</text>\n";
    out << "<text x=\"" << kPad - 6 << "\" y=\"" << py.y() + 4
        << "\" text-anchor=\"end\">"
        << (log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
  }
  out << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12
      << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  out << "<text x=\"14\" y=\"" << kHeight / 2 << "\" transform=\"rotate(-90 14 "
      << kHeight / 2 << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
}

}  // namespace

int write_slice_svg(const Funnel& funnel, std::pair<int, int> axes,
                    const std::vector<Overlay>& overlays,
                    const std::filesystem::path& path,
                    const std::vector<std::string>& axis_labels) {
  funnel.validate();
  const int n = funnel.num_knots();
  std::vector<std::pair<int, Ellipse>> ellipses;
  for (int k = 0; k < n; ++k) {
    if (!std::isinf(funnel.rho[k])) ellipses.emplace_back(k, project(funnel, k, axes));
  }
  const int skipped = n - static_cast<int>(ellipses.size());
  if (ellipses.empty()) return skipped;

  std::vector<Eigen::Vector2d> nominal;
  for (int k = 0; k < n; ++k) {
    nominal.emplace_back(funnel.centers(axes.first, k),
                         funnel.centers(axes.second, k));
  }
  Frame frame{nominal.front(), nominal.front()};
  for (const auto& p : nominal) frame.include(p);
  std::vector<std::vector<Eigen::Vector2d>> outlines;
  for (const auto& [k, e] : ellipses) {
    outlines.push_back(e.boundary());
    for (const auto& p : outlines.back()) frame.include(p);
  }
  for (const auto& o : overlays) {
    for (const auto& p : o.points) frame.include(p);
  }
  frame.finalize();

  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  open_svg(out);
  for (std::size_t i = 0; i < ellipses.size(); ++i) {
    const int k = ellipses[i].first;
    std::string style;
    if (k == 0) {
      style = "stroke=\"#d62728\" stroke-width=\"2\"";
    } else if (k == n - 1) {
      style = "stroke=\"#2ca02c\" stroke-width=\"2\" stroke-dasharray=\"6,4\"";
    } else {
      style = "stroke=\"#999\" stroke-width=\"0.5\" stroke-opacity=\"0.6\"";
    }
    out << polyline(frame, outlines[i], style);
  }
  out << polyline(frame, nominal, "stroke=\"black\" stroke-width=\"1.5\"");
  for (const auto& o : overlays) {
    out << polyline(frame, o.points,
                    "stroke=\"" + o.color + "\" stroke-width=\"1\"");
  }
  const std::string xl = axis_labels.size() > 0 ? axis_labels[0]
                                                : "x" + std::to_string(axes.first);
  const std::string yl = axis_labels.size() > 1 ? axis_labels[1]
                                                : "x" + std::to_string(axes.second);
  axes_box(out, frame, xl, yl);
  out << "</svg>\n";
  return skipped;
}

void write_rho_svg(const std::vector<RhoSeries>& series,
                   const std::filesystem::path& path) {
  Frame frame{{0, kInf}, {0, -kInf}, false};
  for (const auto& s : series) {
    for (std::size_t k = 0; k < s.rho.size(); ++k) {
      if (std::isfinite(s.rho[k]) && s.rho[k] > 0) {
        frame.include({double(k), std::log10(s.rho[k])});
      }
    }
  }
  if (!std::isfinite(frame.lo.y())) frame.lo.y() = frame.hi.y() = 0;
  frame.finalize();

  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  open_svg(out);
  int row = 0;
  for (const auto& s : series) {
    std::vector<Eigen::Vector2d> run;
    auto flush = [&] {
      if (run.size() > 1) {
        out << polyline(frame, run,
                        "stroke=\"" + s.color + "\" stroke-width=\"1.5\"");
      }
      run.clear();
    };
    for (std::size_t k = 0; k < s.rho.size(); ++k) {
      if (std::isfinite(s.rho[k]) && s.rho[k] > 0) {
        run.emplace_back(double(k), std::log10(s.rho[k]));
      } else {
        flush();
      }
    }
    flush();
    out << "<text x=\"" << kWidth - kPad - 4 << "\" y=\"" << kPad + 16 + 16 * row++
        << "\" text-anchor=\"end\" fill=\"" << s.color << "\">" << s.label
        << "</text>\n";
  }
  axes_box(out, frame, "knot", "rho", true);
  out << "</svg>\n";
}

}  // namespace tvroa
