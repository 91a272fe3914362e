#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nmpc/core.hpp"

namespace nmpc {

/// Parametric nonlinear program over box-constrained variables:
/// minimize objective(z, theta) subject to z in box.
struct NlpProblem {
  std::function<double(const Vec& z, const Vec& theta)> objective;
  BoxSet box;
  int dim_z = 0;
  int dim_theta = 0;
};

enum class DiffScheme { Forward, Central };

struct SqpOptions {
  double tol = 1e-6;               // projected-gradient stationarity tolerance
  int max_iter = 60;
  DiffScheme scheme = DiffScheme::Central;
  double fd_step = 1e-7;           // relative finite-difference step
  bool line_search = true;         // full steps when disabled
  double armijo_c = 1e-4;
  int max_line_search = 30;
};

struct NlpSolution {
  Vec z;
  double value = 0.0;
  Vec mult_lower, mult_upper;      // nonnegative; positive only on active bounds
  std::vector<int> active_lower, active_upper;
  double kkt_residual = kInf;
  int iterations = 0;
  bool converged = false;
};

/// BFGS model and last gradient, reusable across consecutive solves.
struct SolverCarry {
  Mat hessian;
  Vec z;
  Vec gradient;
  bool valid = false;
};

namespace detail {

/// min 1/2 d'Bd + g'd  s.t. lo <= d <= hi, with B symmetric positive
/// definite. Primal active-set iteration starting from the clamped origin.
inline Vec solve_box_qp(const Mat& B, const Vec& g, const Vec& lo, const Vec& hi) {
  const Eigen::Index n = g.size();
  Vec d = Vec::Zero(n).cwiseMax(lo).cwiseMin(hi);

  // -1 free, 0 at lower, 1 at upper
  std::vector<int> state(static_cast<std::size_t>(n), -1);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d[i] <= lo[i]) state[static_cast<std::size_t>(i)] = 0;
    if (d[i] >= hi[i]) state[static_cast<std::size_t>(i)] = 1;
    if (lo[i] == hi[i]) state[static_cast<std::size_t>(i)] = 0;  // pinned
  }

  const int max_iter = 50 + 12 * static_cast<int>(n);
  Vec grad(n), p(n);
  for (int iter = 0; iter < max_iter; ++iter) {
    grad = B * d + g;

    std::vector<Eigen::Index> free_idx;
    for (Eigen::Index i = 0; i < n; ++i)
      if (state[static_cast<std::size_t>(i)] == -1) free_idx.push_back(i);

    p.setZero();
    if (!free_idx.empty()) {
      const Eigen::Index m = static_cast<Eigen::Index>(free_idx.size());
      Mat Bff(m, m);
      Vec gf(m);
      for (Eigen::Index a = 0; a < m; ++a) {
        gf[a] = grad[free_idx[static_cast<std::size_t>(a)]];
        for (Eigen::Index b = 0; b < m; ++b)
          Bff(a, b) = B(free_idx[static_cast<std::size_t>(a)], free_idx[static_cast<std::size_t>(b)]);
      }
      Vec pf = Bff.ldlt().solve(-gf);
      for (Eigen::Index a = 0; a < m; ++a) p[free_idx[static_cast<std::size_t>(a)]] = pf[a];
    }

    if (p.lpNorm<Eigen::Infinity>() < 1e-14 * std::max(1.0, d.lpNorm<Eigen::Infinity>()) ||
        free_idx.empty()) {
      // stationary on the working set; test bound multipliers
      Eigen::Index release = -1;
      double most_negative = -1e-12;
      for (Eigen::Index i = 0; i < n; ++i) {
        const int s = state[static_cast<std::size_t>(i)];
        if (s == -1 || lo[i] == hi[i]) continue;
        const double lambda = (s == 0) ? grad[i] : -grad[i];
        if (lambda < most_negative) {
          most_negative = lambda;
          release = i;
        }
      }
      if (release < 0) return d;
      state[static_cast<std::size_t>(release)] = -1;
      continue;
    }

    // step to the nearest blocking bound
    double alpha = 1.0;
    Eigen::Index blocking = -1;
    int blocking_side = 0;
    for (Eigen::Index i : free_idx) {
      if (p[i] > 0.0 && std::isfinite(hi[i])) {
        const double a = (hi[i] - d[i]) / p[i];
        if (a < alpha) {
          alpha = a;
          blocking = i;
          blocking_side = 1;
        }
      } else if (p[i] < 0.0 && std::isfinite(lo[i])) {
        const double a = (lo[i] - d[i]) / p[i];
        if (a < alpha) {
          alpha = a;
          blocking = i;
          blocking_side = 0;
        }
      }
    }

    d += alpha * p;
    if (blocking >= 0) {
      d[blocking] = blocking_side == 1 ? hi[blocking] : lo[blocking];
      state[static_cast<std::size_t>(blocking)] = blocking_side;
    }
    d = d.cwiseMax(lo).cwiseMin(hi);
  }
  return d;  // active-set cycling is not expected for SPD B; return best effort
}

inline double fd_step_for(double base, double value) { return base * std::max(1.0, std::abs(value)); }

}  // namespace detail

/// Finite-difference gradient of the objective in z.
inline Vec fd_gradient(const NlpProblem& problem, const Vec& z, const Vec& theta,
                       DiffScheme scheme, double fd_step, double* f0_out = nullptr) {
  const Eigen::Index n = z.size();
  Vec g(n);
  Vec zp = z;
  if (scheme == DiffScheme::Forward) {
    const double f0 = problem.objective(z, theta);
    if (f0_out) *f0_out = f0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = detail::fd_step_for(fd_step, z[i]);
      zp[i] = z[i] + h;
      g[i] = (problem.objective(zp, theta) - f0) / h;
      zp[i] = z[i];
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = detail::fd_step_for(fd_step, z[i]);
      zp[i] = z[i] + h;
      const double fp = problem.objective(zp, theta);
      zp[i] = z[i] - h;
      const double fm = problem.objective(zp, theta);
      zp[i] = z[i];
      g[i] = (fp - fm) / (2.0 * h);
    }
    if (f0_out) *f0_out = problem.objective(z, theta);
  }
  return g;
}

inline double projected_gradient_norm(const Vec& z, const Vec& g, const BoxSet& box) {
  return (z - box.project(z - g)).lpNorm<Eigen::Infinity>();
}

namespace detail {

inline void bfgs_update(Mat& B, const Vec& s, const Vec& y) {
  const double ss = s.squaredNorm();
  if (ss < 1e-30) return;
  Vec Bs = B * s;
  const double sBs = s.dot(Bs);
  if (sBs <= 1e-30) return;
  double sy = s.dot(y);
  Vec y_eff = y;
  if (sy < 0.2 * sBs) {  // Powell damping keeps B positive definite
    const double theta = 0.8 * sBs / (sBs - sy);
    y_eff = theta * y + (1.0 - theta) * Bs;
    sy = s.dot(y_eff);
  }
  B -= (Bs * Bs.transpose()) / sBs;
  B += (y_eff * y_eff.transpose()) / sy;
}

inline void fill_multipliers(NlpSolution& sol, const Vec& g, const BoxSet& box) {
  const Eigen::Index n = sol.z.size();
  sol.mult_lower = Vec::Zero(n);
  sol.mult_upper = Vec::Zero(n);
  sol.active_lower.clear();
  sol.active_upper.clear();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double act_tol_lo = 1e-9 * (1.0 + std::abs(box.lower[i]));
    const double act_tol_hi = 1e-9 * (1.0 + std::abs(box.upper[i]));
    if (std::isfinite(box.lower[i]) && sol.z[i] - box.lower[i] <= act_tol_lo) {
      sol.active_lower.push_back(static_cast<int>(i));
      sol.mult_lower[i] = std::max(0.0, g[i]);
    } else if (std::isfinite(box.upper[i]) && box.upper[i] - sol.z[i] <= act_tol_hi) {
      sol.active_upper.push_back(static_cast<int>(i));
      sol.mult_upper[i] = std::max(0.0, -g[i]);
    }
  }
}

}  // namespace detail

class SqpSolver {
 public:
  explicit SqpSolver(SqpOptions options = {}) : opts_(options) {}

  const SqpOptions& options() const { return opts_; }
  SqpOptions& options() { return opts_; }

  /// Full solve from z0 (projected into the box first). A carry, when given,
  /// seeds the BFGS model and receives the final one.
  NlpSolution solve(const NlpProblem& problem, const Vec& theta, const Vec& z0,
                    SolverCarry* carry = nullptr) const {
    if (z0.size() != problem.dim_z) throw DimensionError("SqpSolver::solve: bad z0 dimension");

    NlpSolution sol;
    sol.z = problem.box.project(z0);

    double f = 0.0;
    Vec g;
    try {
      g = fd_gradient(problem, sol.z, theta, opts_.scheme, opts_.fd_step, &f);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("SqpSolver: objective evaluation failed at start: ") +
                               e.what());
    }

    Mat B;
    if (carry && carry->valid && carry->hessian.rows() == problem.dim_z)
      B = carry->hessian;
    else
      B = Mat::Identity(problem.dim_z, problem.dim_z);

    bool first_update = !(carry && carry->valid && carry->hessian.rows() == problem.dim_z);
    Vec lo(problem.dim_z), hi(problem.dim_z), d, z_new, g_new;

    for (int iter = 0; iter <= opts_.max_iter; ++iter) {
      sol.kkt_residual = projected_gradient_norm(sol.z, g, problem.box);
      if (sol.kkt_residual <= opts_.tol) {
        sol.converged = true;
        break;
      }
      if (iter == opts_.max_iter) break;

      lo = problem.box.lower - sol.z;
      hi = problem.box.upper - sol.z;
      d = detail::solve_box_qp(B, g, lo, hi);
      const double slope = g.dot(d);
      if (d.lpNorm<Eigen::Infinity>() < 1e-15 * std::max(1.0, sol.z.lpNorm<Eigen::Infinity>()))
        break;  // stalled below tolerance

      double t = 1.0;
      double f_new = 0.0;
      bool accepted = false;
      const double noise = 1e-13 * std::max(1.0, std::abs(f));
      if (opts_.line_search && slope < -noise) {
        for (int ls = 0; ls < opts_.max_line_search; ++ls) {
          z_new = problem.box.project(sol.z + t * d);
          f_new = evaluate(problem, z_new, theta, iter);
          if (f_new <= f + opts_.armijo_c * t * slope) {
            accepted = true;
            break;
          }
          t *= 0.5;
        }
        // decrease below observable noise still polishes the iterate
        if (!accepted && f_new <= f + noise) accepted = true;
      } else {
        z_new = problem.box.project(sol.z + d);
        f_new = evaluate(problem, z_new, theta, iter);
        accepted = f_new <= f + noise || !opts_.line_search;
      }
      if (!accepted) break;  // no acceptable step; report current iterate

      g_new = fd_gradient(problem, z_new, theta, opts_.scheme, opts_.fd_step);
      Vec s = z_new - sol.z;
      Vec y = g_new - g;
      if (first_update) {
        const double sy = s.dot(y);
        if (sy > 1e-30) B *= y.squaredNorm() / sy;  // Shanno sizing before the first update
        first_update = false;
      }
      detail::bfgs_update(B, s, y);

      sol.z = z_new;
      f = f_new;
      g.swap(g_new);
      ++sol.iterations;
    }

    sol.value = f;
    detail::fill_multipliers(sol, g, problem.box);
    if (carry) {
      carry->hessian = B;
      carry->z = sol.z;
      carry->gradient = g;
      carry->valid = true;
    }
    return sol;
  }

  /// One SQP iteration at fresh parameters: gradient at (z_prev, theta_new),
  /// one box-QP step with the carried BFGS model, full step, carry refresh.
  /// Returns z_prev unchanged when it is already stationary.
  std::pair<Vec, SolverCarry> single_iteration(const NlpProblem& problem, const Vec& theta_new,
                                               const Vec& z_prev, SolverCarry carry) const {
    Vec z = problem.box.project(z_prev);
    Vec g = fd_gradient(problem, z, theta_new, opts_.scheme, opts_.fd_step);

    if (projected_gradient_norm(z, g, problem.box) <= opts_.tol) {
      carry.z = z;
      carry.gradient = g;
      if (carry.hessian.rows() != problem.dim_z) {
        carry.hessian = Mat::Identity(problem.dim_z, problem.dim_z);
      }
      carry.valid = true;
      return {z, std::move(carry)};
    }

    Mat B;
    if (carry.valid && carry.hessian.rows() == problem.dim_z)
      B = carry.hessian;
    else
      B = Mat::Identity(problem.dim_z, problem.dim_z);

    const Vec lo = problem.box.lower - z;
    const Vec hi = problem.box.upper - z;
    const Vec d = detail::solve_box_qp(B, g, lo, hi);
    Vec z_new = problem.box.project(z + d);

    Vec g_new = fd_gradient(problem, z_new, theta_new, opts_.scheme, opts_.fd_step);
    detail::bfgs_update(B, (z_new - z).eval(), (g_new - g).eval());

    carry.hessian = std::move(B);
    carry.z = z_new;
    carry.gradient = std::move(g_new);
    carry.valid = true;
    return {std::move(z_new), std::move(carry)};
  }

 private:
  double evaluate(const NlpProblem& problem, const Vec& z, const Vec& theta, int iter) const {
    try {
      return problem.objective(z, theta);
    } catch (const std::exception& e) {
      throw std::runtime_error("SqpSolver: objective evaluation failed at iteration " +
                               std::to_string(iter) + ": " + e.what());
    }
  }

  SqpOptions opts_;
};

class SensitivityUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SensitivityData {
  Mat du_dtheta;  // dim_z x dim_theta; zero rows on strongly active indices
  std::vector<int> active_lower, active_upper;
  bool licq = false;
  bool scc = false;
  bool ssoc = false;  // proxy: reduced Hessian approximation positive definite
};

struct SensitivityOptions {
  DiffScheme scheme = DiffScheme::Central;
  double fd_step_z = 1e-5;
  double fd_step_theta = 1e-5;
  double scc_tol = 1e-8;
  bool use_carry_hessian = false;  // cheap mode: reuse the BFGS model
};

/// Differentiates the solution map of a converged box-constrained NLP: on the
/// inactive index set the sensitivity solves
///   H_II du_I = -(d^2 f / dz dtheta)_I dtheta,
/// active rows stay clamped. Throws SensitivityUnavailable when strict
/// complementarity fails or the reduced Hessian is not positive definite.
inline SensitivityData extract_sensitivities(const NlpProblem& problem, const NlpSolution& sol,
                                             const Vec& theta,
                                             const SensitivityOptions& opts = {},
                                             const SolverCarry* carry = nullptr) {
  if (!sol.converged)
    throw SensitivityUnavailable("extract_sensitivities: solution not converged");

  SensitivityData data;
  data.active_lower = sol.active_lower;
  data.active_upper = sol.active_upper;

  data.licq = true;
  for (Eigen::Index i = 0; i < problem.box.lower.size(); ++i)
    if (problem.box.lower[i] == problem.box.upper[i]) data.licq = false;

  // strict complementarity: every active bound needs a clearly positive multiplier
  data.scc = true;
  for (int i : sol.active_lower)
    if (sol.mult_lower[i] <= opts.scc_tol) data.scc = false;
  for (int i : sol.active_upper)
    if (sol.mult_upper[i] <= opts.scc_tol) data.scc = false;
  if (!data.scc)
    throw SensitivityUnavailable("extract_sensitivities: strict complementarity fails");

  std::vector<Eigen::Index> inactive;
  {
    std::vector<bool> active(static_cast<std::size_t>(problem.dim_z), false);
    for (int i : sol.active_lower) active[static_cast<std::size_t>(i)] = true;
    for (int i : sol.active_upper) active[static_cast<std::size_t>(i)] = true;
    for (Eigen::Index i = 0; i < problem.dim_z; ++i)
      if (!active[static_cast<std::size_t>(i)]) inactive.push_back(i);
  }

  data.du_dtheta = Mat::Zero(problem.dim_z, problem.dim_theta);
  const Eigen::Index m = static_cast<Eigen::Index>(inactive.size());
  if (m == 0) {
    data.ssoc = true;
    return data;
  }

  // reduced Hessian on the inactive block
  Mat H(m, m);
  if (opts.use_carry_hessian && carry && carry->valid &&
      carry->hessian.rows() == problem.dim_z) {
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b) H(a, b) = carry->hessian(inactive[a], inactive[b]);
  } else {
    Vec zp = sol.z;
    for (Eigen::Index a = 0; a < m; ++a) {
      const Eigen::Index i = inactive[a];
      const double h = detail::fd_step_for(opts.fd_step_z, sol.z[i]);
      zp[i] = sol.z[i] + h;
      Vec gp = fd_gradient(problem, zp, theta, DiffScheme::Central, opts.fd_step_z);
      zp[i] = sol.z[i] - h;
      Vec gm = fd_gradient(problem, zp, theta, DiffScheme::Central, opts.fd_step_z);
      zp[i] = sol.z[i];
      for (Eigen::Index b = 0; b < m; ++b) H(b, a) = (gp[inactive[b]] - gm[inactive[b]]) / (2.0 * h);
    }
    H = 0.5 * (H + H.transpose()).eval();
  }

  Eigen::LDLT<Mat> ldlt(H);
  data.ssoc = ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0.0).all();
  if (!data.ssoc)
    throw SensitivityUnavailable("extract_sensitivities: reduced Hessian not positive definite");

  // cross derivatives d(grad_I f)/dtheta
  Mat C(m, problem.dim_theta);
  Vec tp = theta;
  std::optional<Vec> g0;
  if (opts.scheme == DiffScheme::Forward)
    g0 = fd_gradient(problem, sol.z, theta, DiffScheme::Forward, opts.fd_step_z);
  for (Eigen::Index j = 0; j < problem.dim_theta; ++j) {
    const double h = detail::fd_step_for(opts.fd_step_theta, theta[j]);
    if (opts.scheme == DiffScheme::Forward) {
      tp[j] = theta[j] + h;
      Vec gp = fd_gradient(problem, sol.z, tp, DiffScheme::Forward, opts.fd_step_z);
      tp[j] = theta[j];
      for (Eigen::Index a = 0; a < m; ++a) C(a, j) = (gp[inactive[a]] - (*g0)[inactive[a]]) / h;
    } else {
      tp[j] = theta[j] + h;
      Vec gp = fd_gradient(problem, sol.z, tp, DiffScheme::Central, opts.fd_step_z);
      tp[j] = theta[j] - h;
      Vec gm = fd_gradient(problem, sol.z, tp, DiffScheme::Central, opts.fd_step_z);
      tp[j] = theta[j];
      for (Eigen::Index a = 0; a < m; ++a)
        C(a, j) = (gp[inactive[a]] - gm[inactive[a]]) / (2.0 * h);
    }
  }

  Mat S = ldlt.solve(-C);
  for (Eigen::Index a = 0; a < m; ++a) data.du_dtheta.row(inactive[a]) = S.row(a);
  return data;
}

}  // namespace nmpc
