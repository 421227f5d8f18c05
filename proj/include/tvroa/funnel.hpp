#pragma once

// Time-varying ellipsoidal region of attraction: per knot, the sublevel set
// B_k = {x | (x − x*_k)ᵀ S_k (x − x*_k) < ρ_k}, with ρ_k ∈ (0, ∞].

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "tvroa/common.hpp"

namespace tvroa {

struct TvlqrPolicy;

struct Funnel {
  std::vector<double> knot_times;
  Eigen::MatrixXd centers;  // nominal state per knot, one column each
  std::vector<Eigen::MatrixXd> S;
  std::vector<double> rho;
  std::string trajectory_id;

  int num_knots() const { return static_cast<int>(rho.size()); }
  int num_states() const { return static_cast<int>(centers.rows()); }
  double inlet() const { return rho.front(); }
  double outlet() const { return rho.back(); }

  /// Throws InputError on inconsistent sizes, asymmetric S or ρ ≤ 0.
  void validate() const;
};

/// Funnel over the policy's knots with every threshold set to `initial`
/// except the last, which is `outlet`.
Funnel make_funnel(const TvlqrPolicy& policy, double initial, double outlet);

/// x̄ᵀ S_k x̄ < ρ_k. Always true where ρ_k = ∞.
bool contains(const Funnel& funnel, int k, const Eigen::VectorXd& x);

struct Ellipse {
  Eigen::Vector2d center;
  Eigen::Matrix2d shape;  // {p | (p − c)ᵀ shape (p − c) < rho}
  double rho = 1;

  bool contains(const Eigen::Vector2d& p) const;
  /// Boundary polyline with `points` vertices.
  std::vector<Eigen::Vector2d> boundary(int points = 96) const;
};

/// Slice of B_k through the nominal on the given pair of state axes: the
/// remaining coordinates are held at their nominal values. Throws InputError
/// when ρ_k is infinite or the axes are invalid.
Ellipse project(const Funnel& funnel, int k, std::pair<int, int> axes);

enum class Containment { kContained, kNotContained, kIndeterminate };

std::string to_string(Containment containment);

struct CompositionReport {
  Containment result = Containment::kIndeterminate;
  bool concentric = false;
  /// Positive: room to spare. Concentric case, ρ_b/ρ_a − λ_max(S_a⁻¹S_b)
  /// normalized by ρ_b/ρ_a; otherwise −min_τ λ_max of the S-lemma matrix.
  double margin = 0;
};

/// Whether the outlet of `upstream` lies inside the inlet of `downstream`.
/// Exact in both cases: a generalized eigenvalue test when the centers
/// coincide, the S-lemma (lossless for one quadratic constraint) otherwise.
/// Infinite thresholds give kIndeterminate.
CompositionReport composable(const Funnel& upstream, const Funnel& downstream);

/// √det(ρ₀ S₀⁻¹), proportional to the inlet volume.
double inlet_volume_proxy(const Funnel& funnel);

/// JSON: version, knot_times, rho ("inf" for ∞), S (row-major nested arrays),
/// nominal (one state per knot), trajectory_id.
void write_funnel_json(const Funnel& funnel, const std::filesystem::path& path);
Funnel read_funnel_json(const std::filesystem::path& path);

/// Polyline overlaid on a slice plot, in plot coordinates.
struct Overlay {
  std::vector<Eigen::Vector2d> points;
  std::string color = "#1f77b4";
};

/// Slice plot on `axes`: every finite knot as a faint ellipse, the inlet solid,
/// the outlet dashed, the nominal path and overlays. Returns the number of
/// knots skipped because their threshold is infinite. Writes nothing and
/// returns num_knots() when no knot is finite.
int write_slice_svg(const Funnel& funnel, std::pair<int, int> axes,
                    const std::vector<Overlay>& overlays,
                    const std::filesystem::path& path,
                    const std::vector<std::string>& axis_labels = {});

struct RhoSeries {
  std::string label;
  std::vector<double> rho;
  std::string color = "#1f77b4";
};

/// ρ-versus-knot curves on a logarithmic axis; infinite entries are gaps.
void write_rho_svg(const std::vector<RhoSeries>& series,
                   const std::filesystem::path& path);

}  // namespace tvroa
