#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "nmpc/core.hpp"

namespace nmpc {

using OdeRhs = std::function<void(double t, const Vec& y, Vec& dydt)>;

struct OdeProblem {
  OdeRhs rhs;
  double t_begin = 0.0;
  double t_end = 0.0;
  Vec y0;
  double rel_tol = 1e-6;
  double abs_tol = 1e-6;
  // Hard step ceiling. For stiff-but-smooth dynamics the embedded error
  // estimate cannot see an instability while the fast mode is quiescent, so
  // explicit stepping must be capped at the stability limit explicitly.
  double max_step = kInf;
};

class IntegrationFailure : public std::runtime_error {
 public:
  IntegrationFailure(const std::string& what, double t, Vec y)
      : std::runtime_error(what), t_last(t), y_last(std::move(y)) {}
  double t_last;
  Vec y_last;
};

struct OdeSolution {
  Vec y_end;
  long accepted_steps = 0;
  long rejected_steps = 0;
  std::vector<std::pair<double, Vec>> dense;  // at caller-requested output times
  std::vector<double> nodes;                  // accepted step boundaries, t_begin..t_end
};

namespace detail {

// Dormand-Prince 5(4) tableau.
inline constexpr double kA2 = 1.0 / 5, kA3 = 3.0 / 10, kA4 = 4.0 / 5, kA5 = 8.0 / 9;
inline constexpr double kB21 = 1.0 / 5;
inline constexpr double kB31 = 3.0 / 40, kB32 = 9.0 / 40;
inline constexpr double kB41 = 44.0 / 45, kB42 = -56.0 / 15, kB43 = 32.0 / 9;
inline constexpr double kB51 = 19372.0 / 6561, kB52 = -25360.0 / 2187, kB53 = 64448.0 / 6561,
                        kB54 = -212.0 / 729;
inline constexpr double kB61 = 9017.0 / 3168, kB62 = -355.0 / 33, kB63 = 46732.0 / 5247,
                        kB64 = 49.0 / 176, kB65 = -5103.0 / 18656;
inline constexpr double kC1 = 35.0 / 384, kC3 = 500.0 / 1113, kC4 = 125.0 / 192,
                        kC5 = -2187.0 / 6784, kC6 = 11.0 / 84;
// y5 - y4 error weights (k7 is the FSAL derivative at the step end).
inline constexpr double kE1 = kC1 - 5179.0 / 57600;
inline constexpr double kE3 = kC3 - 7571.0 / 16695;
inline constexpr double kE4 = kC4 - 393.0 / 640;
inline constexpr double kE5 = kC5 + 92097.0 / 339200;
inline constexpr double kE6 = kC6 - 187.0 / 2100;
inline constexpr double kE7 = -1.0 / 40;

// Workspace for one Dormand-Prince step; k1 in, k7 out enables FSAL reuse.
struct Dopri5Step {
  Vec k2, k3, k4, k5, k6, ytmp;

  void resize(Eigen::Index n) {
    k2.resize(n);
    k3.resize(n);
    k4.resize(n);
    k5.resize(n);
    k6.resize(n);
    ytmp.resize(n);
  }

  // Advances y0 -> y1 over h; writes the FSAL derivative into k7 and the
  // embedded error estimate into err.
  void advance(const OdeRhs& rhs, double t, double h, const Vec& y0, const Vec& k1, Vec& y1,
               Vec& k7, Vec& err) {
    ytmp = y0 + h * kB21 * k1;
    rhs(t + kA2 * h, ytmp, k2);
    ytmp = y0 + h * (kB31 * k1 + kB32 * k2);
    rhs(t + kA3 * h, ytmp, k3);
    ytmp = y0 + h * (kB41 * k1 + kB42 * k2 + kB43 * k3);
    rhs(t + kA4 * h, ytmp, k4);
    ytmp = y0 + h * (kB51 * k1 + kB52 * k2 + kB53 * k3 + kB54 * k4);
    rhs(t + kA5 * h, ytmp, k5);
    ytmp = y0 + h * (kB61 * k1 + kB62 * k2 + kB63 * k3 + kB64 * k4 + kB65 * k5);
    rhs(t + h, ytmp, k6);
    y1 = y0 + h * (kC1 * k1 + kC3 * k3 + kC4 * k4 + kC5 * k5 + kC6 * k6);
    rhs(t + h, y1, k7);
    err = h * (kE1 * k1 + kE3 * k3 + kE4 * k4 + kE5 * k5 + kE6 * k6 + kE7 * k7);
  }

  // Hairer's 4th-order dense interpolant on the last accepted step.
  Vec interpolate(double theta, double h, const Vec& y0, const Vec& k1, const Vec& k7) const {
    const double x1 = 5.0 * (2558722523.0 - 31403016.0 * theta) / 11282082432.0;
    const double x3 = 100.0 * (882725551.0 - 15701508.0 * theta) / 32700410799.0;
    const double x4 = 25.0 * (443332067.0 - 31403016.0 * theta) / 1880347072.0;
    const double x5 = 32805.0 * (23143187.0 - 3489224.0 * theta) / 199316789632.0;
    const double x6 = 55.0 * (29972135.0 - 7076736.0 * theta) / 822651844.0;
    const double x7 = 10.0 * (7414447.0 - 829305.0 * theta) / 29380423.0;

    const double tm1 = theta - 1.0;
    const double th2 = theta * theta;
    const double a = th2 * (3.0 - 2.0 * theta);
    const double b = th2 * tm1;
    const double c = th2 * tm1 * tm1;
    const double d = theta * tm1 * tm1;

    const double b1 = a * kC1 - c * x1 + d;
    const double b3 = a * kC3 + c * x3;
    const double b4 = a * kC4 - c * x4;
    const double b5 = a * kC5 + c * x5;
    const double b6 = a * kC6 - c * x6;
    const double b7 = b + c * x7;

    return y0 + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6 + b7 * k7);
  }
};

inline double error_norm(const Vec& err, const Vec& y0, const Vec& y1, double rel_tol,
                         double abs_tol) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    const double sc = std::max(abs_tol, rel_tol * std::max(std::abs(y0[i]), std::abs(y1[i])));
    const double q = err[i] / sc;
    acc += q * q;
  }
  return std::sqrt(acc / static_cast<double>(err.size()));
}

// Starting step from the magnitude of the right-hand side (Hairer's h_init).
inline double initial_step(const OdeRhs& rhs, double t0, const Vec& y0, const Vec& f0,
                           double direction, double span, double rel_tol, double abs_tol) {
  auto scaled_norm = [&](const Vec& v, const Vec& ref) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double sc = std::max(abs_tol, rel_tol * std::abs(ref[i]));
      acc += (v[i] / sc) * (v[i] / sc);
    }
    return std::sqrt(acc / static_cast<double>(v.size()));
  };
  const double d0 = scaled_norm(y0, y0);
  const double d1 = scaled_norm(f0, y0);
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);

  Vec y1 = y0 + direction * h0 * f0;
  Vec f1(y0.size());
  rhs(t0 + direction * h0, y1, f1);
  const double d2 = scaled_norm((f1 - f0).eval(), y0) / h0;

  double h1;
  if (std::max(d1, d2) <= 1e-15)
    h1 = std::max(1e-6, h0 * 1e-3);
  else
    h1 = std::pow(0.01 / std::max(d1, d2), 0.2);
  return direction * std::min({100.0 * h0, h1, span});
}

}  // namespace detail

/// Adaptive Dormand-Prince 5(4) integration with optional dense output at
/// sorted times inside the span. Supports backward spans (t_end < t_begin).
inline OdeSolution integrate(const OdeProblem& problem,
                             std::span<const double> output_times = {}) {
  if (problem.t_end == problem.t_begin)
    throw std::invalid_argument("integrate: empty time span");
  if (problem.rel_tol <= 0.0 || problem.abs_tol <= 0.0)
    throw std::invalid_argument("integrate: tolerances must be positive");

  const double direction = problem.t_end > problem.t_begin ? 1.0 : -1.0;
  const double span = std::abs(problem.t_end - problem.t_begin);
  const Eigen::Index n = problem.y0.size();

  OdeSolution sol;
  sol.nodes.push_back(problem.t_begin);

  Vec y = problem.y0;
  Vec k1(n), k7(n), y1(n), err(n);
  detail::Dopri5Step step;
  step.resize(n);

  double t = problem.t_begin;
  problem.rhs(t, y, k1);
  if (!k1.allFinite()) throw IntegrationFailure("integrate: non-finite rhs at start", t, y);

  double h = detail::initial_step(problem.rhs, t, y, k1, direction, span, problem.rel_tol,
                                  problem.abs_tol);
  if (std::abs(h) > problem.max_step) h = direction * problem.max_step;

  std::size_t out_idx = 0;
  const long max_steps = 10'000'000;
  long total_steps = 0;

  while (direction * (problem.t_end - t) > 0.0) {
    if (++total_steps > max_steps)
      throw IntegrationFailure("integrate: step budget exhausted", t, y);

    if (direction * (t + h - problem.t_end) > 0.0) h = problem.t_end - t;
    const double h_min = 16.0 * std::numeric_limits<double>::epsilon() *
                         std::max(std::abs(t), std::abs(problem.t_end));
    if (std::abs(h) < h_min)
      throw IntegrationFailure("integrate: step size underflow", t, y);

    step.advance(problem.rhs, t, h, y, k1, y1, k7, err);
    if (!y1.allFinite() || !k7.allFinite())
      throw IntegrationFailure("integrate: non-finite state or rhs", t, y);

    const double en = detail::error_norm(err, y, y1, problem.rel_tol, problem.abs_tol);
    if (en <= 1.0) {
      // accepted; emit dense output inside (t, t+h]
      const double t_new = t + h;
      while (out_idx < output_times.size() &&
             direction * (output_times[out_idx] - t_new) <= 1e-14 * std::max(1.0, std::abs(t_new))) {
        const double tau = output_times[out_idx];
        const double theta = (tau - t) / h;
        sol.dense.emplace_back(tau, step.interpolate(theta, h, y, k1, k7));
        ++out_idx;
      }
      y.swap(y1);
      k1.swap(k7);
      t = t_new;
      sol.nodes.push_back(t);
      ++sol.accepted_steps;
      const double factor = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
      h *= factor;
      if (std::abs(h) > problem.max_step) h = direction * problem.max_step;
    } else {
      ++sol.rejected_steps;
      h *= std::clamp(0.9 * std::pow(en, -0.2), 0.2, 1.0);
    }
  }

  sol.nodes.back() = problem.t_end;
  sol.y_end = std::move(y);
  return sol;
}

/// One Dormand-Prince step per consecutive node pair; no error control.
/// Used for order checks and for re-evaluating on a frozen step grid.
inline OdeSolution integrate_nodes(const OdeRhs& rhs, const Vec& y0,
                                   std::span<const double> nodes) {
  if (nodes.size() < 2) throw std::invalid_argument("integrate_nodes: need at least two nodes");

  const Eigen::Index n = y0.size();
  Vec y = y0;
  Vec k1(n), k7(n), y1(n), err(n);
  detail::Dopri5Step step;
  step.resize(n);

  rhs(nodes[0], y, k1);
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
    const double h = nodes[i + 1] - nodes[i];
    if (h == 0.0) continue;
    step.advance(rhs, nodes[i], h, y, k1, y1, k7, err);
    if (!y1.allFinite())
      throw IntegrationFailure("integrate_nodes: non-finite state", nodes[i], y);
    y.swap(y1);
    k1.swap(k7);
  }

  OdeSolution sol;
  sol.y_end = std::move(y);
  sol.accepted_steps = static_cast<long>(nodes.size()) - 1;
  sol.nodes.assign(nodes.begin(), nodes.end());
  return sol;
}

/// Fixed-step mode over a uniform grid.
inline OdeSolution integrate_fixed(const OdeProblem& problem, long n_steps) {
  if (n_steps < 1) throw std::invalid_argument("integrate_fixed: need at least one step");
  std::vector<double> nodes(static_cast<std::size_t>(n_steps) + 1);
  const double h = (problem.t_end - problem.t_begin) / static_cast<double>(n_steps);
  for (long i = 0; i <= n_steps; ++i) nodes[static_cast<std::size_t>(i)] = problem.t_begin + i * h;
  nodes.back() = problem.t_end;
  return integrate_nodes(problem.rhs, problem.y0, nodes);
}

}  // namespace nmpc
