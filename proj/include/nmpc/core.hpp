#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmpc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// States, controls and parameter samples are plain real vectors with the
// Euclidean metric; the aliases keep signatures readable.
using StateVec = Vec;
using ControlVec = Vec;
using ParamSample = Vec;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }

/// Euclidean distance between two same-dimension vectors.
inline double metric_distance(const Vec& a, const Vec& b) {
  if (a.size() != b.size())
    throw DimensionError("metric_distance: dimensions " + std::to_string(a.size()) +
                         " and " + std::to_string(b.size()) + " are incompatible");
  return (a - b).norm();
}

/// Supremum over a finite sequence of per-sample distances.
inline double seq_sup_distance(std::span<const Vec> a, std::span<const Vec> b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("seq_sup_distance: empty sequence");
  if (a.size() != b.size())
    throw DimensionError("seq_sup_distance: sequence lengths differ");
  double sup = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    sup = std::max(sup, metric_distance(a[k], b[k]));
  return sup;
}

inline double seq_sup_distance(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  return seq_sup_distance(std::span<const Vec>(a), std::span<const Vec>(b));
}

/// Max-norm distance between two scalar sample windows.
inline double window_sup_distance(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("window_sup_distance: empty window");
  if (a.size() != b.size())
    throw DimensionError("window_sup_distance: window lengths differ");
  double sup = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) sup = std::max(sup, std::abs(a[k] - b[k]));
  return sup;
}

/// Axis-aligned box; unbounded sides are encoded as +/-infinity.
struct BoxSet {
  Vec lower;
  Vec upper;

  BoxSet() = default;
  BoxSet(Vec lo, Vec hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size())
      throw DimensionError("BoxSet: bound dimensions differ");
    for (Eigen::Index i = 0; i < lower.size(); ++i)
      if (!(lower[i] <= upper[i]))
        throw std::invalid_argument("BoxSet: lower > upper at index " + std::to_string(i));
  }

  static BoxSet unbounded(int dim) {
    return BoxSet(Vec::Constant(dim, -kInf), Vec::Constant(dim, kInf));
  }

  static BoxSet interval(double lo, double hi, int dim = 1) {
    return BoxSet(Vec::Constant(dim, lo), Vec::Constant(dim, hi));
  }

  int dim() const { return static_cast<int>(lower.size()); }

  bool contains(const Vec& v, double tol = 0.0) const {
    if (v.size() != lower.size()) throw DimensionError("BoxSet::contains: dimension mismatch");
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (v[i] < lower[i] - tol || v[i] > upper[i] + tol) return false;
    return true;
  }

  Vec project(const Vec& v) const {
    if (v.size() != lower.size()) throw DimensionError("BoxSet::project: dimension mismatch");
    return v.cwiseMax(lower).cwiseMin(upper);
  }

  /// Signed distance of v to the box boundary along the tightest coordinate;
  /// +inf for a fully unbounded box, negative when v is outside.
  double boundary_distance(const Vec& v) const {
    if (v.size() != lower.size())
      throw DimensionError("BoxSet::boundary_distance: dimension mismatch");
    double dist = kInf;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (std::isfinite(lower[i])) dist = std::min(dist, v[i] - lower[i]);
      if (std::isfinite(upper[i])) dist = std::min(dist, upper[i] - v[i]);
    }
    return dist;
  }

  /// Stack this box n times (block box over a sequence of moves).
  BoxSet replicate(int n) const {
    Vec lo(static_cast<Eigen::Index>(n) * lower.size());
    Vec hi(static_cast<Eigen::Index>(n) * lower.size());
    for (int k = 0; k < n; ++k) {
      lo.segment(k * lower.size(), lower.size()) = lower;
      hi.segment(k * lower.size(), lower.size()) = upper;
    }
    return BoxSet(std::move(lo), std::move(hi));
  }
};

inline ControlVec project_box(const ControlVec& v, const BoxSet& set) { return set.project(v); }

/// Time-indexed open-loop data: one more state than controls, one parameter
/// sample per control interval.
struct Trajectory {
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<StateVec> states;
  std::vector<ControlVec> controls;
  std::vector<ParamSample> params;

  void validate() const {
    if (dt <= 0.0) throw std::invalid_argument("Trajectory: dt must be positive");
    if (states.size() != controls.size() + 1)
      throw std::invalid_argument("Trajectory: need exactly one more state than controls");
    if (params.size() != controls.size())
      throw std::invalid_argument("Trajectory: need one parameter sample per control");
  }

  int horizon() const { return static_cast<int>(controls.size()); }
  double time_at(int k) const { return t0 + k * dt; }
};

}  // namespace nmpc
