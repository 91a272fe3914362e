#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "nmpc/core.hpp"
#include "nmpc/plant.hpp"
#include "nmpc/road.hpp"
#include "nmpc/sqp.hpp"

namespace nmpc {

/// Finite-horizon optimal control problem family: plant, horizon, constraint
/// boxes and the control sampling period. Instances bind an initial state and
/// a road window.
struct ParametricOcp {
  const PlantModel* model = nullptr;
  int horizon = 2;  // N >= 2
  BoxSet control_set;
  std::optional<BoxSet> state_set;
  double T_u = 0.1;

  void validate() const {
    if (!model) throw std::invalid_argument("ParametricOcp: missing plant model");
    if (horizon < 2) throw std::invalid_argument("ParametricOcp: horizon must be at least 2");
    if (T_u <= 0.0) throw std::invalid_argument("ParametricOcp: T_u must be positive");
    if (control_set.dim() != model->control_dim())
      throw DimensionError("ParametricOcp: control box dimension mismatch");
  }
};

struct OcpOptions {
  double sqp_tol = 1e-6;
  int sqp_max_iter = 60;
  DiffScheme scheme = DiffScheme::Forward;
  double fd_step = 1e-7;
  std::optional<std::vector<ControlVec>> z_ref;  // grid/scale reference controls
};

struct OcpSolution {
  std::vector<ControlVec> controls;
  double value = 0.0;  // physical objective units
  NlpSolution nlp;     // normalized-objective solver output
  SolverCarry carry;
  bool state_feasible = true;
};

inline Vec stack_controls(std::span<const ControlVec> u_seq) {
  Eigen::Index total = 0;
  for (const auto& u : u_seq) total += u.size();
  Vec z(total);
  Eigen::Index at = 0;
  for (const auto& u : u_seq) {
    z.segment(at, u.size()) = u;
    at += u.size();
  }
  return z;
}

inline std::vector<ControlVec> unstack_controls(const Vec& z, int control_dim) {
  if (control_dim <= 0 || z.size() % control_dim != 0)
    throw DimensionError("unstack_controls: size is not a multiple of the control dimension");
  std::vector<ControlVec> out;
  out.reserve(static_cast<std::size_t>(z.size() / control_dim));
  for (Eigen::Index at = 0; at < z.size(); at += control_dim)
    out.push_back(z.segment(at, control_dim));
  return out;
}

/// Shift-and-hold warm start for the advanced problem.
inline std::vector<ControlVec> shift_warm_start(std::span<const ControlVec> u_prev) {
  if (u_prev.empty()) throw std::invalid_argument("shift_warm_start: empty sequence");
  std::vector<ControlVec> out(u_prev.begin() + 1, u_prev.end());
  out.push_back(u_prev.back());
  return out;
}

/// One bound OCP: initial state plus road window, discretized by direct
/// single shooting over the control moves. The NLP parameter vector stacks
/// the initial state with the window's interpolant coefficients, so the
/// objective is a smooth parametric family in (z, theta). All evaluations
/// inside a solve reuse the integration grids frozen at construction, which
/// keeps finite differences consistent.
class OcpInstance {
 public:
  OcpInstance(ParametricOcp ocp, Vec x0, std::span<const double> window, double window_t0,
              double sample_dt, std::optional<int> cutoff, OcpOptions options = {})
      : ocp_(std::move(ocp)), x0_(std::move(x0)), sample_dt_(sample_dt), cutoff_(cutoff),
        opts_(std::move(options)) {
    ocp_.validate();
    if (x0_.size() != ocp_.model->state_dim())
      throw DimensionError("OcpInstance: x0 dimension mismatch");
    const std::size_t needed =
        static_cast<std::size_t>(std::llround(ocp_.horizon * ocp_.T_u / sample_dt_)) + 1;
    if (window.size() != needed)
      throw std::invalid_argument("OcpInstance: window has " + std::to_string(window.size()) +
                                  " samples, horizon needs " + std::to_string(needed));
    road_ = FftInterpolant::from_samples(window, window_t0, sample_dt_, cutoff_);
    window_.assign(window.begin(), window.end());
    t0_ = window_t0;

    z_ref_ = opts_.z_ref ? stack_controls(*opts_.z_ref) : default_reference();
    freeze_grids(grid_reference());
  }

  const ParametricOcp& ocp() const { return ocp_; }
  double t0() const { return t0_; }
  const Vec& x0() const { return x0_; }
  const FftInterpolant& road() const { return road_; }
  std::span<const double> window() const { return window_; }
  double cost_scale() const { return scale_; }
  const OcpOptions& options() const { return opts_; }

  int dim_z() const { return ocp_.horizon * ocp_.model->control_dim(); }
  int dim_theta() const {
    return ocp_.model->state_dim() + static_cast<int>(road_.param_dim());
  }

  Vec theta_nominal() const { return pack_theta(x0_, road_); }

  /// Parameters for a measured state and road window (same geometry/cutoff).
  Vec make_theta(const Vec& x_meas, std::span<const double> window_meas) const {
    if (window_meas.size() != window_.size())
      throw DimensionError("OcpInstance::make_theta: window length mismatch");
    const FftInterpolant interp =
        FftInterpolant::from_samples(window_meas, t0_, sample_dt_, cutoff_);
    return pack_theta(x_meas, interp);
  }

  /// Normalized objective of the parametric NLP.
  double objective(const Vec& z, const Vec& theta) const { return raw_cost(z, theta) / scale_; }

  NlpProblem nlp() const {
    NlpProblem p;
    p.dim_z = dim_z();
    p.dim_theta = dim_theta();
    p.box = ocp_.control_set.replicate(ocp_.horizon);
    p.objective = [this](const Vec& z, const Vec& theta) { return objective(z, theta); };
    return p;
  }

  SqpOptions sqp_options() const {
    SqpOptions s;
    s.tol = opts_.sqp_tol;
    s.max_iter = opts_.sqp_max_iter;
    s.scheme = opts_.scheme;
    s.fd_step = opts_.fd_step;
    return s;
  }

  /// Open-loop simulation under a given admissible control sequence,
  /// integrated adaptively (not on the frozen grids).
  Trajectory rollout(std::span<const ControlVec> u_seq) const {
    check_controls(u_seq);
    Trajectory traj;
    traj.t0 = t0_;
    traj.dt = ocp_.T_u;
    traj.states.push_back(x0_);
    Vec x = x0_;
    const ParamSignal signal{&road_};
    for (int k = 0; k < ocp_.horizon; ++k) {
      const double tk = t0_ + k * ocp_.T_u;
      PlantStep step = ocp_.model->step(x, u_seq[static_cast<std::size_t>(k)], signal, tk, ocp_.T_u);
      x = step.x_next;
      traj.states.push_back(x);
      traj.controls.push_back(u_seq[static_cast<std::size_t>(k)]);
      traj.params.push_back(Vec::Constant(1, road_.value(tk)));
    }
    traj.validate();
    return traj;
  }

  /// Horizon cost of a control sequence in physical units (adaptive grids).
  double eval_cost(std::span<const ControlVec> u_seq) const {
    check_controls(u_seq);
    double total = 0.0;
    Vec x = x0_;
    const ParamSignal signal{&road_};
    for (int k = 0; k < ocp_.horizon; ++k) {
      PlantStep step = ocp_.model->step(x, u_seq[static_cast<std::size_t>(k)], signal,
                                        t0_ + k * ocp_.T_u, ocp_.T_u);
      total += step.stage_cost;
      x = step.x_next;
    }
    return total;
  }

  /// Same evaluation path as the NLP objective, in physical units.
  double frozen_cost(std::span<const ControlVec> u_seq, const Vec& theta) const {
    return raw_cost(stack_controls(u_seq), theta);
  }

  OcpSolution solve(std::optional<std::span<const ControlVec>> warm_start = std::nullopt,
                    const SolverCarry* warm_carry = nullptr) const {
    return solve_at(theta_nominal(), warm_start, warm_carry);
  }

  /// Solve the same parametric family at other parameters (measured state
  /// and window), e.g. for reoptimization-style updates.
  OcpSolution solve_at(const Vec& theta,
                       std::optional<std::span<const ControlVec>> warm_start = std::nullopt,
                       const SolverCarry* warm_carry = nullptr) const {
    Vec z0;
    if (warm_start) {
      check_dimensions(*warm_start);
      z0 = stack_controls(*warm_start);
    } else {
      z0 = z_ref_;
    }
    SqpSolver solver(sqp_options());
    SolverCarry carry;
    if (warm_carry && warm_carry->valid) carry = *warm_carry;
    NlpSolution nlp_sol = solver.solve(nlp(), theta, z0, &carry);

    OcpSolution out;
    out.controls = unstack_controls(nlp_sol.z, ocp_.model->control_dim());
    out.value = nlp_sol.value * scale_;
    out.nlp = std::move(nlp_sol);
    out.carry = std::move(carry);
    if (ocp_.state_set) {
      const Trajectory traj = rollout(out.controls);
      for (const auto& x : traj.states)
        if (!ocp_.state_set->contains(x, 1e-12)) out.state_feasible = false;
    }
    return out;
  }

 private:
  Vec default_reference() const {
    Vec lo = ocp_.control_set.lower, hi = ocp_.control_set.upper;
    Vec center(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
      if (std::isfinite(lo[i]) && std::isfinite(hi[i]))
        center[i] = 0.5 * (lo[i] + hi[i]);
      else if (std::isfinite(lo[i]))
        center[i] = lo[i];
      else if (std::isfinite(hi[i]))
        center[i] = hi[i];
      else
        center[i] = 0.0;
    }
    Vec z(dim_z());
    for (int k = 0; k < ocp_.horizon; ++k) z.segment(k * center.size(), center.size()) = center;
    return z;
  }

  /// Control at which the step grids adapt. Explicit integration of the
  /// damped plant is stability-limited, and the stiff eigenvalue grows with
  /// the damping, so the grid must be chosen at the largest admissible
  /// control; any other control in the box then integrates strictly inside
  /// the stability region of the frozen grid.
  Vec grid_reference() const {
    Vec u(ocp_.control_set.dim());
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      if (std::isfinite(ocp_.control_set.upper[i]))
        u[i] = ocp_.control_set.upper[i];
      else if (std::isfinite(ocp_.control_set.lower[i]))
        u[i] = ocp_.control_set.lower[i];
      else
        u[i] = 0.0;
    }
    Vec z(dim_z());
    for (int k = 0; k < ocp_.horizon; ++k) z.segment(k * u.size(), u.size()) = u;
    return z;
  }

  void freeze_grids(const Vec& z_grid) {
    grids_.clear();
    grids_.reserve(static_cast<std::size_t>(ocp_.horizon));
    const ParamSignal signal{&road_};
    Vec x = x0_;
    double raw = 0.0;
    const auto u_ref = unstack_controls(z_grid, ocp_.model->control_dim());
    for (int k = 0; k < ocp_.horizon; ++k) {
      PlantStep step = ocp_.model->step(x, u_ref[static_cast<std::size_t>(k)], signal,
                                        t0_ + k * ocp_.T_u, ocp_.T_u);
      grids_.push_back(std::move(step.nodes));
      raw += step.stage_cost;
      x = step.x_next;
    }
    scale_ = std::max(1.0, raw);
  }

  Vec pack_theta(const Vec& x, const FftInterpolant& interp) const {
    Vec theta(dim_theta());
    theta.head(x.size()) = x;
    theta.tail(interp.param_dim()) = interp.params();
    return theta;
  }

  double raw_cost(const Vec& z, const Vec& theta) const {
    if (z.size() != dim_z()) throw DimensionError("OcpInstance: bad control stack size");
    if (theta.size() != dim_theta()) throw DimensionError("OcpInstance: bad parameter size");
    const int nx = ocp_.model->state_dim();
    const int nu = ocp_.model->control_dim();
    const FftInterpolant interp = road_.with_params(theta.tail(road_.param_dim()));
    const ParamSignal signal{&interp};

    Vec x = theta.head(nx);
    double total = 0.0;
    for (int k = 0; k < ocp_.horizon; ++k) {
      PlantStep step = ocp_.model->step(x, z.segment(k * nu, nu), signal, t0_ + k * ocp_.T_u,
                                        ocp_.T_u, grids_[static_cast<std::size_t>(k)]);
      total += step.stage_cost;
      x = step.x_next;
    }
    return total;
  }

  void check_dimensions(std::span<const ControlVec> u_seq) const {
    if (static_cast<int>(u_seq.size()) != ocp_.horizon)
      throw DimensionError("OcpInstance: control sequence length must equal the horizon");
    for (const auto& u : u_seq)
      if (u.size() != ocp_.model->control_dim())
        throw DimensionError("OcpInstance: control dimension mismatch");
  }

  void check_controls(std::span<const ControlVec> u_seq) const {
    check_dimensions(u_seq);
    for (std::size_t k = 0; k < u_seq.size(); ++k)
      if (!ocp_.control_set.contains(u_seq[k], 1e-12))
        throw std::invalid_argument("OcpInstance: control " + std::to_string(k) +
                                    " outside the admissible box");
  }

  ParametricOcp ocp_;
  Vec x0_;
  double sample_dt_;
  std::optional<int> cutoff_;
  OcpOptions opts_;
  FftInterpolant road_;
  std::vector<double> window_;
  double t0_ = 0.0;
  Vec z_ref_;
  std::vector<std::vector<double>> grids_;
  double scale_ = 1.0;
};

}  // namespace nmpc
