#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nmpc/core.hpp"
#include "nmpc/ocp.hpp"
#include "nmpc/sqp.hpp"

namespace nmpc {

enum class UpdateStrategy { Nominal, Sensitivity, Realtime, FullReopt, Hierarchical };

inline std::string strategy_name(UpdateStrategy s) {
  switch (s) {
    case UpdateStrategy::Nominal: return "nominal";
    case UpdateStrategy::Sensitivity: return "sensitivity";
    case UpdateStrategy::Realtime: return "realtime";
    case UpdateStrategy::FullReopt: return "full_reopt";
    case UpdateStrategy::Hierarchical: return "hierarchical";
  }
  return "unknown";
}

inline UpdateStrategy parse_strategy(const std::string& name) {
  if (name == "nominal") return UpdateStrategy::Nominal;
  if (name == "sensitivity") return UpdateStrategy::Sensitivity;
  if (name == "realtime") return UpdateStrategy::Realtime;
  if (name == "full_reopt") return UpdateStrategy::FullReopt;
  if (name == "hierarchical") return UpdateStrategy::Hierarchical;
  throw std::invalid_argument("unknown update strategy '" + name + "'");
}

struct Measurement {
  Vec x;
  std::vector<double> window;
};

struct UpdateDiagnostics {
  double update_norm = 0.0;        // max-norm change against the nominal sequence
  bool fallback = false;
  double projection_excess = 0.0;  // worst pre-projection box violation
  double wall_time_ms = 0.0;
  std::string note;
};

struct UpdateResult {
  std::vector<ControlVec> u_bar;   // full updated open loop, admissible
  ControlVec feedback;             // first element
  UpdateDiagnostics diagnostics;
  std::optional<double> value;     // objective at the measurement when a solve ran
};

/// Everything an update may consume: the bound problem family, its nominal
/// solution, optional precomputed sensitivities and the solver carry.
struct UpdateContext {
  const OcpInstance* instance = nullptr;
  OcpSolution nominal;
  std::optional<SensitivityData> sensitivities;
  SolverCarry carry;
};

namespace detail {

class ScopedTimer {
 public:
  explicit ScopedTimer(double& out) : out_(out), start_(std::chrono::steady_clock::now()) {}
  ~ScopedTimer() {
    out_ = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
               .count();
  }

 private:
  double& out_;
  std::chrono::steady_clock::time_point start_;
};

inline double sup_control_distance(std::span<const ControlVec> a, std::span<const ControlVec> b) {
  double sup = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    sup = std::max(sup, (a[k] - b[k]).lpNorm<Eigen::Infinity>());
  return sup;
}

/// Clamp a stacked control vector, reporting the worst violation.
inline std::vector<ControlVec> project_stacked(const Vec& z, const BoxSet& move_box, int nu,
                                               double* excess) {
  std::vector<ControlVec> out = unstack_controls(z, nu);
  double worst = 0.0;
  for (auto& u : out) {
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      if (u[i] < move_box.lower[i]) worst = std::max(worst, move_box.lower[i] - u[i]);
      if (u[i] > move_box.upper[i]) worst = std::max(worst, u[i] - move_box.upper[i]);
    }
    u = move_box.project(u);
  }
  if (excess) *excess = worst;
  return out;
}

inline UpdateResult nominal_result(const UpdateContext& ctx) {
  UpdateResult r;
  r.u_bar = ctx.nominal.controls;
  r.feedback = r.u_bar.front();
  return r;
}

}  // namespace detail

/// Abstract control update: maps the precomputed nominal solution plus fresh
/// measurements to an admissible control sequence. Implementations degrade to
/// the nominal control (flagged) instead of aborting.
class Updater {
 public:
  virtual ~Updater() = default;
  virtual UpdateStrategy strategy() const = 0;
  virtual bool needs_sensitivities() const { return false; }
  virtual bool wants_fast_ticks() const { return false; }

  virtual UpdateResult update(UpdateContext& ctx, const Measurement& m) = 0;

  /// Fast-rate correction between slow updates; default holds the last
  /// slow-rate feedback.
  virtual ControlVec fast_feedback(UpdateContext& ctx, int /*tick*/, const Measurement& /*fast*/,
                                   UpdateDiagnostics* diag) {
    if (diag) diag->note = "fast ticks unsupported; holding slow feedback";
    return last_feedback_;
  }

 protected:
  ControlVec last_feedback_;
};

class NominalUpdater final : public Updater {
 public:
  UpdateStrategy strategy() const override { return UpdateStrategy::Nominal; }
  UpdateResult update(UpdateContext& ctx, const Measurement&) override {
    UpdateResult r = detail::nominal_result(ctx);
    detail::ScopedTimer timer(r.diagnostics.wall_time_ms);
    last_feedback_ = r.feedback;
    return r;
  }
};

/// First-order correction of the whole sequence from the solution
/// sensitivities, then componentwise projection onto the control set.
class SensitivityUpdater final : public Updater {
 public:
  UpdateStrategy strategy() const override { return UpdateStrategy::Sensitivity; }
  bool needs_sensitivities() const override { return true; }

  UpdateResult update(UpdateContext& ctx, const Measurement& m) override {
    UpdateResult r;
    detail::ScopedTimer timer(r.diagnostics.wall_time_ms);
    if (!ctx.sensitivities) {
      r = detail::nominal_result(ctx);
      r.diagnostics.fallback = true;
      r.diagnostics.note = "sensitivities unavailable";
      last_feedback_ = r.feedback;
      return r;
    }
    const OcpInstance& inst = *ctx.instance;
    const Vec dtheta = inst.make_theta(m.x, m.window) - inst.theta_nominal();
    const Vec z_new = stack_controls(ctx.nominal.controls) + ctx.sensitivities->du_dtheta * dtheta;
    r.u_bar = detail::project_stacked(z_new, inst.ocp().control_set,
                                      inst.ocp().model->control_dim(),
                                      &r.diagnostics.projection_excess);
    r.feedback = r.u_bar.front();
    r.diagnostics.update_norm = detail::sup_control_distance(r.u_bar, ctx.nominal.controls);
    last_feedback_ = r.feedback;
    return r;
  }
};

/// A single SQP iteration with the fresh measurement embedded; full step, no
/// line search. The carry persists across MPC steps.
class RealtimeUpdater final : public Updater {
 public:
  UpdateStrategy strategy() const override { return UpdateStrategy::Realtime; }

  UpdateResult update(UpdateContext& ctx, const Measurement& m) override {
    UpdateResult r;
    detail::ScopedTimer timer(r.diagnostics.wall_time_ms);
    const OcpInstance& inst = *ctx.instance;
    try {
      SqpOptions opts = inst.sqp_options();
      opts.line_search = false;
      SqpSolver solver(opts);
      const Vec theta_new = inst.make_theta(m.x, m.window);
      auto [z_new, carry] = solver.single_iteration(inst.nlp(), theta_new,
                                                    stack_controls(ctx.nominal.controls),
                                                    ctx.carry.valid ? ctx.carry : carry_);
      carry_ = carry;  // persists into the next step
      ctx.carry = std::move(carry);
      r.u_bar = detail::project_stacked(z_new, inst.ocp().control_set,
                                        inst.ocp().model->control_dim(),
                                        &r.diagnostics.projection_excess);
      r.feedback = r.u_bar.front();
      r.diagnostics.update_norm = detail::sup_control_distance(r.u_bar, ctx.nominal.controls);
    } catch (const std::exception& e) {
      r = detail::nominal_result(ctx);
      r.diagnostics.fallback = true;
      r.diagnostics.note = std::string("realtime step failed: ") + e.what();
    }
    last_feedback_ = r.feedback;
    return r;
  }

 private:
  SolverCarry carry_;
};

/// Complete reoptimization at the measured state and window, warm-started
/// from the nominal solution.
class FullReoptUpdater final : public Updater {
 public:
  UpdateStrategy strategy() const override { return UpdateStrategy::FullReopt; }

  UpdateResult update(UpdateContext& ctx, const Measurement& m) override {
    UpdateResult r;
    detail::ScopedTimer timer(r.diagnostics.wall_time_ms);
    const OcpInstance& inst = *ctx.instance;
    try {
      const Vec theta_new = inst.make_theta(m.x, m.window);
      OcpSolution sol = inst.solve_at(theta_new, std::span<const ControlVec>(ctx.nominal.controls),
                                      &ctx.carry);
      r.u_bar = std::move(sol.controls);
      r.feedback = r.u_bar.front();
      r.value = sol.value;
      r.diagnostics.update_norm = detail::sup_control_distance(r.u_bar, ctx.nominal.controls);
      if (!sol.nlp.converged) {
        r.diagnostics.fallback = true;  // best iterate still applied
        r.diagnostics.note = "reoptimization not converged";
      }
    } catch (const std::exception& e) {
      r = detail::nominal_result(ctx);
      r.diagnostics.fallback = true;
      r.diagnostics.note = std::string("reoptimization failed: ") + e.what();
    }
    last_feedback_ = r.feedback;
    return r;
  }
};

/// Two-level scheme: a slow-rate full solve at the newest measurement with
/// sensitivity extraction (the "design" level), plus cheap first-order
/// corrections against every fast-rate measurement, with frozen derivatives.
class HierarchicalUpdater final : public Updater {
 public:
  HierarchicalUpdater(int ticks_per_step, SensitivityOptions sens_opts)
      : ticks_(ticks_per_step), sens_opts_(sens_opts) {
    sens_opts_.use_carry_hessian = true;
    sens_opts_.scheme = DiffScheme::Forward;
  }

  UpdateStrategy strategy() const override { return UpdateStrategy::Hierarchical; }
  bool wants_fast_ticks() const override { return true; }

  UpdateResult update(UpdateContext& ctx, const Measurement& m) override {
    UpdateResult r;
    detail::ScopedTimer timer(r.diagnostics.wall_time_ms);
    const OcpInstance& inst = *ctx.instance;
    d_level_ok_ = false;
    try {
      theta_d_ = inst.make_theta(m.x, m.window);
      sol_d_ = inst.solve_at(theta_d_, std::span<const ControlVec>(ctx.nominal.controls),
                             &ctx.carry);
      window_params_d_ = theta_d_.tail(inst.road().param_dim());
      predict_ticks(inst, m);
      d_level_ok_ = true;

      sens_d_.reset();
      try {
        sens_d_ = extract_sensitivities(inst.nlp(), sol_d_.nlp, theta_d_, sens_opts_, &ctx.carry);
      } catch (const SensitivityUnavailable& e) {
        r.diagnostics.note = std::string("fast corrections disabled: ") + e.what();
      }

      r.u_bar = sol_d_.controls;
      r.feedback = r.u_bar.front();
      r.value = sol_d_.value;
      r.diagnostics.update_norm = detail::sup_control_distance(r.u_bar, ctx.nominal.controls);
      if (!sol_d_.nlp.converged) {
        r.diagnostics.fallback = true;
        r.diagnostics.note = "design-level solve not converged";
      }
    } catch (const std::exception& e) {
      r = detail::nominal_result(ctx);
      r.diagnostics.fallback = true;
      r.diagnostics.note = std::string("design-level solve failed: ") + e.what();
    }
    last_feedback_ = r.feedback;
    return r;
  }

  ControlVec fast_feedback(UpdateContext& ctx, int tick, const Measurement& fast,
                           UpdateDiagnostics* diag) override {
    if (!d_level_ok_ || !sens_d_ || tick <= 0 ||
        tick >= static_cast<int>(pred_at_ticks_.size())) {
      if (diag && !sens_d_) diag->fallback = true;
      return last_feedback_;
    }
    const OcpInstance& inst = *ctx.instance;
    const int nx = inst.ocp().model->state_dim();
    const int nu = inst.ocp().model->control_dim();

    Vec dtheta(theta_d_.size());
    dtheta.head(nx) = fast.x - pred_at_ticks_[static_cast<std::size_t>(tick)];
    const FftInterpolant interp_fast =
        FftInterpolant::from_samples(fast.window, inst.road().t_begin(),
                                     inst.road().period() / inst.road().dft_size(),
                                     inst.road().max_mode());
    dtheta.tail(inst.road().param_dim()) = interp_fast.params() - window_params_d_;

    const Vec du0 = (sens_d_->du_dtheta * dtheta).head(nu);
    ControlVec u = sol_d_.controls.front() + du0;
    const ControlVec projected = inst.ocp().control_set.project(u);
    if (diag) {
      diag->update_norm = std::max(diag->update_norm, (projected - sol_d_.controls.front())
                                                          .lpNorm<Eigen::Infinity>());
      diag->projection_excess =
          std::max(diag->projection_excess, (u - projected).lpNorm<Eigen::Infinity>());
    }
    return projected;
  }

 private:
  void predict_ticks(const OcpInstance& inst, const Measurement& m) {
    const double T_u = inst.ocp().T_u;
    const double t_p = T_u / ticks_;
    std::vector<double> tick_times;
    tick_times.reserve(static_cast<std::size_t>(ticks_));
    for (int j = 1; j < ticks_; ++j) tick_times.push_back(inst.t0() + j * t_p);

    const FftInterpolant road_meas = FftInterpolant::from_samples(
        m.window, inst.road().t_begin(), inst.road().period() / inst.road().dft_size(),
        inst.road().max_mode());
    const ParamSignal signal{&road_meas};
    const PlantStep step = inst.ocp().model->step(m.x, sol_d_.controls.front(), signal, inst.t0(),
                                                  T_u, {}, tick_times);
    pred_at_ticks_.assign(static_cast<std::size_t>(ticks_), m.x);
    for (const auto& [t, x] : step.dense) {
      const int j = static_cast<int>(std::llround((t - inst.t0()) / t_p));
      if (j >= 1 && j < ticks_) pred_at_ticks_[static_cast<std::size_t>(j)] = x;
    }
  }

  int ticks_;
  SensitivityOptions sens_opts_;
  bool d_level_ok_ = false;
  Vec theta_d_;
  Vec window_params_d_;
  OcpSolution sol_d_;
  std::optional<SensitivityData> sens_d_;
  std::vector<Vec> pred_at_ticks_;
};

inline std::unique_ptr<Updater> make_updater(UpdateStrategy strategy, int ticks_per_step = 1,
                                             SensitivityOptions sens_opts = {}) {
  switch (strategy) {
    case UpdateStrategy::Nominal: return std::make_unique<NominalUpdater>();
    case UpdateStrategy::Sensitivity: return std::make_unique<SensitivityUpdater>();
    case UpdateStrategy::Realtime: return std::make_unique<RealtimeUpdater>();
    case UpdateStrategy::FullReopt: return std::make_unique<FullReoptUpdater>();
    case UpdateStrategy::Hierarchical:
      return std::make_unique<HierarchicalUpdater>(ticks_per_step, sens_opts);
  }
  throw std::invalid_argument("make_updater: unknown strategy");
}

}  // namespace nmpc
