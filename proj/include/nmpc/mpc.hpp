#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nmpc/core.hpp"
#include "nmpc/ocp.hpp"
#include "nmpc/plant.hpp"
#include "nmpc/road.hpp"
#include "nmpc/updates.hpp"

namespace nmpc {

struct ClosedLoopConfig {
  ParametricOcp ocp;
  UpdateStrategy strategy = UpdateStrategy::Nominal;
  DisturbanceSpec disturbance;
  int steps = 1;
  Vec x0;
  RoadProfile road;                     // sampled at the fast rate over the whole run
  std::optional<int> fft_cutoff;
  OcpOptions ocp_options;
  SensitivityOptions sens_options;
  bool record_measured_value = true;    // objective at the measurement, every step

  int ticks_per_step() const {
    const double ratio = ocp.T_u / road.sample_period;
    const int r = static_cast<int>(std::llround(ratio));
    if (r < 1 || std::abs(ratio - r) > 1e-9)
      throw std::invalid_argument("ClosedLoopConfig: T_u must be an integer multiple of T_p");
    return r;
  }

  std::size_t window_samples() const {
    return static_cast<std::size_t>(ocp.horizon) * static_cast<std::size_t>(ticks_per_step()) + 1;
  }
};

struct StepRecord {
  int n = 0;
  double t = 0.0;
  Vec x_nominal;                     // prediction the controller planned from
  Vec x_meas;                        // measured plant state
  Vec x_pred_next;                   // advanced-step prediction of the next state
  ControlVec u_nominal_feedback;     // first move of the precomputed solution
  ControlVec u_applied;              // feedback actually sent at the step start
  std::vector<ControlVec> u_ticks;   // applied control per fast tick (size 1 or ratio)
  double stage_cost = 0.0;           // incurred along the true plant
  double nominal_stage_cost = 0.0;   // one nominal interval under the nominal feedback
  double v_nominal = 0.0;            // objective of the precomputed solve
  double v_measured = 0.0;           // objective re-solved at the measurement
  UpdateDiagnostics update;
  double feasibility_margin = kInf;  // distance of the measured state to the state-set boundary
  std::vector<double> window_nominal, window_measured;
};

struct ClosedLoopRecord {
  std::vector<StepRecord> steps;
  double closed_loop_cost = 0.0;
  double v_nominal_final = 0.0;
  double v_measured_final = 0.0;
  Vec x_final_true, x_final_meas;
  bool completed = false;
  std::string failure_reason;

  std::vector<double> measured_values() const {
    std::vector<double> v;
    v.reserve(steps.size() + 1);
    for (const auto& s : steps) v.push_back(s.v_measured);
    v.push_back(v_measured_final);
    return v;
  }

  std::vector<double> nominal_values() const {
    std::vector<double> v;
    v.reserve(steps.size() + 1);
    for (const auto& s : steps) v.push_back(s.v_nominal);
    v.push_back(v_nominal_final);
    return v;
  }

  std::vector<double> stage_costs() const {
    std::vector<double> v;
    v.reserve(steps.size());
    for (const auto& s : steps) v.push_back(s.stage_cost);
    return v;
  }

  std::vector<double> nominal_stage_costs() const {
    std::vector<double> v;
    v.reserve(steps.size());
    for (const auto& s : steps) v.push_back(s.nominal_stage_cost);
    return v;
  }
};

namespace detail {

inline std::vector<double> shift_window(std::span<const double> measured,
                                        std::span<const double> fresh_tail, int ratio) {
  std::vector<double> out(measured.begin() + ratio, measured.end());
  out.insert(out.end(), fresh_tail.begin(), fresh_tail.end());
  return out;
}

}  // namespace detail

/// Runs the measure / update / apply / predict / reoptimize loop.
///
/// Per step n: (1) measure the plant state and the nominal road window under
/// bounded uniform scatter; (2) apply the selected update and feed its
/// feedback to the plant, which evolves from the measured state with the
/// measured road; (3) predict the next nominal state from the measurement,
/// the applied control and the measured road; (4) shift the window, append
/// fresh preview samples and solve the next problem ahead of time.
///
/// With all disturbance bounds zero, measurements carry no new information
/// and fast-rate ticks are bypassed; every strategy then reproduces the
/// nominal loop exactly.
inline ClosedLoopRecord run_closed_loop(const ClosedLoopConfig& config) {
  config.ocp.validate();
  if (config.steps < 1) throw std::invalid_argument("run_closed_loop: steps must be >= 1");
  config.road.validate();
  if (std::abs(config.road.sample_period * std::llround(config.ocp.T_u / config.road.sample_period) -
               config.ocp.T_u) > 1e-9)
    throw std::invalid_argument("run_closed_loop: incompatible sampling periods");

  const int ratio = config.ticks_per_step();
  const std::size_t window_len = config.window_samples();
  const std::size_t needed =
      static_cast<std::size_t>(config.steps) * static_cast<std::size_t>(ratio) + window_len;
  if (config.road.samples.size() < needed)
    throw std::invalid_argument("run_closed_loop: road profile too short: have " +
                                std::to_string(config.road.samples.size()) + " samples, need " +
                                std::to_string(needed));

  const double t_p = config.road.sample_period;
  const double T_u = config.ocp.T_u;
  const PlantModel& model = *config.ocp.model;
  const bool disturbed = config.disturbance.any();

  UniformDraw rng_step = UniformDraw::derive(config.disturbance.seed, 0);
  UniformDraw rng_fast = UniformDraw::derive(config.disturbance.seed, 1);
  UniformDraw rng_plant = UniformDraw::derive(config.disturbance.seed, 2);

  auto updater = make_updater(config.strategy, ratio, config.sens_options);
  const bool fast_ticks = updater->wants_fast_ticks() && disturbed;

  ClosedLoopRecord record;
  record.steps.reserve(static_cast<std::size_t>(config.steps));

  Vec x_true = config.x0;
  Vec x_nominal = config.x0;
  std::vector<double> window_nominal(config.road.samples.begin(),
                                     config.road.samples.begin() + window_len);

  std::unique_ptr<OcpInstance> instance;
  OcpSolution sol;
  std::optional<SensitivityData> sens;

  auto solve_instance = [&](const Vec& x, std::span<const double> window, double t0,
                            std::optional<std::span<const ControlVec>> warm,
                            const SolverCarry* carry) {
    instance = std::make_unique<OcpInstance>(config.ocp, x, window, t0, t_p, config.fft_cutoff,
                                             config.ocp_options);
    return instance->solve(warm, carry);
  };

  try {
    sol = solve_instance(x_nominal, window_nominal, 0.0, std::nullopt, nullptr);
  } catch (const std::exception& e) {
    record.failure_reason = std::string("initial solve failed: ") + e.what();
    return record;
  }

  if (updater->needs_sensitivities()) {
    try {
      sens = extract_sensitivities(instance->nlp(), sol.nlp, instance->theta_nominal(),
                                   config.sens_options, &sol.carry);
    } catch (const SensitivityUnavailable&) {
      sens.reset();
    }
  }

  for (int n = 0; n < config.steps; ++n) {
    StepRecord rec;
    rec.n = n;
    rec.t = n * T_u;
    rec.x_nominal = x_nominal;
    rec.window_nominal = window_nominal;
    rec.u_nominal_feedback = sol.controls.front();
    rec.v_nominal = sol.value;

    // (1) measurement of the plant state and the nominal window
    auto [x_meas, window_meas] = disturb(x_true, window_nominal, config.disturbance, rng_step);
    rec.x_meas = x_meas;
    rec.window_measured = window_meas;
    if (config.ocp.state_set)
      rec.feasibility_margin = config.ocp.state_set->boundary_distance(x_meas);

    // (2) update the precomputed control with the measurement
    UpdateContext ctx;
    ctx.instance = instance.get();
    ctx.nominal = sol;
    ctx.sensitivities = sens;
    ctx.carry = sol.carry;
    Measurement meas{x_meas, window_meas};

    UpdateResult update;
    try {
      update = updater->update(ctx, meas);
    } catch (const std::exception& e) {
      record.failure_reason = "update failed at step " + std::to_string(n) + ": " + e.what();
      return record;
    }
    rec.update = update.diagnostics;
    rec.u_applied = update.feedback;

    if (config.record_measured_value) {
      if (update.value) {
        rec.v_measured = *update.value;
      } else {
        try {
          const Vec theta_meas = instance->make_theta(x_meas, window_meas);
          rec.v_measured =
              instance->solve_at(theta_meas, std::span<const ControlVec>(sol.controls), &sol.carry)
                  .value;
        } catch (const std::exception& e) {
          record.failure_reason =
              "measured-value solve failed at step " + std::to_string(n) + ": " + e.what();
          return record;
        }
      }
    }

    // apply to the true plant; the plant evolves from the measured state with
    // the measured road signal
    const FftInterpolant road_meas =
        FftInterpolant::from_samples(window_meas, rec.t, t_p, config.fft_cutoff);
    double stage = 0.0;
    Vec x_after;
    try {
      if (!fast_ticks) {
        rec.u_ticks.push_back(update.feedback);
        PlantStep step = step_plant(model, x_meas, update.feedback, ParamSignal{&road_meas}, rec.t,
                                    T_u, config.disturbance, rng_plant);
        stage = step.stage_cost;
        x_after = step.x_next;
      } else {
        // fast loop: a fresh measurement and a control correction every tick;
        // the plant feels the newest measured road section
        Vec x_tick = x_meas;
        for (int j = 0; j < ratio; ++j) {
          ControlVec u_j;
          const FftInterpolant* road_j = &road_meas;
          FftInterpolant road_fast;
          if (j == 0) {
            u_j = update.feedback;
          } else {
            auto [x_fast, window_fast] =
                disturb(x_tick, window_nominal, config.disturbance, rng_fast);
            road_fast = FftInterpolant::from_samples(window_fast, rec.t, t_p, config.fft_cutoff);
            road_j = &road_fast;
            u_j = updater->fast_feedback(ctx, j, Measurement{x_fast, std::move(window_fast)},
                                         &rec.update);
          }
          rec.u_ticks.push_back(u_j);
          PlantStep sub = step_plant(model, x_tick, u_j, ParamSignal{road_j}, rec.t + j * t_p, t_p,
                                     config.disturbance, rng_plant);
          stage += sub.stage_cost;
          x_tick = sub.x_next;
        }
        x_after = x_tick;
      }
    } catch (const IntegrationFailure& e) {
      record.failure_reason =
          "plant integration failed at step " + std::to_string(n) + ": " + e.what();
      return record;
    }

    // (3) nominal prediction from the measurement, applied control, measured road
    Vec x_pred;
    if (!fast_ticks) {
      x_pred = x_after;  // identical computation when the mismatch draw is zero
      if (config.disturbance.delta_f > 0.0) {
        const PlantStep pred =
            model.step(x_meas, update.feedback, ParamSignal{&road_meas}, rec.t, T_u);
        x_pred = pred.x_next;
      }
    } else {
      Vec x_sim = x_meas;
      for (int j = 0; j < ratio; ++j) {
        const PlantStep sub = model.step(x_sim, rec.u_ticks[static_cast<std::size_t>(j)],
                                         ParamSignal{&road_meas}, rec.t + j * t_p, t_p);
        x_sim = sub.x_next;
      }
      x_pred = x_sim;
    }
    rec.x_pred_next = x_pred;

    // nominal stage cost under the nominal feedback, for the monitor
    {
      const FftInterpolant road_nom =
          FftInterpolant::from_samples(window_nominal, rec.t, t_p, config.fft_cutoff);
      rec.nominal_stage_cost =
          model.step(x_nominal, rec.u_nominal_feedback, ParamSignal{&road_nom}, rec.t, T_u)
              .stage_cost;
    }

    rec.stage_cost = stage;
    record.closed_loop_cost += stage;
    x_true = x_after;
    x_nominal = x_pred;

    // (4) advance the window and solve the next problem ahead of time
    const std::size_t fresh_begin =
        (static_cast<std::size_t>(n) + 1) * static_cast<std::size_t>(ratio) + window_len - ratio;
    const std::span<const double> fresh_tail(config.road.samples.data() + fresh_begin,
                                             static_cast<std::size_t>(ratio));
    window_nominal = detail::shift_window(window_meas, fresh_tail, ratio);

    const std::vector<ControlVec> warm = shift_warm_start(sol.controls);
    try {
      sol = solve_instance(x_nominal, window_nominal, (n + 1) * T_u,
                           std::span<const ControlVec>(warm), &sol.carry);
    } catch (const std::exception& e) {
      record.steps.push_back(std::move(rec));
      record.failure_reason =
          "advanced-step solve failed after step " + std::to_string(n) + ": " + e.what();
      return record;
    }

    if (updater->needs_sensitivities()) {
      try {
        sens = extract_sensitivities(instance->nlp(), sol.nlp, instance->theta_nominal(),
                                     config.sens_options, &sol.carry);
      } catch (const SensitivityUnavailable&) {
        sens.reset();
      }
    }

    record.steps.push_back(std::move(rec));
  }

  // final measurement closes the value sequences
  record.v_nominal_final = sol.value;
  auto [x_meas_final, window_meas_final] =
      disturb(x_true, window_nominal, config.disturbance, rng_step);
  record.x_final_true = x_true;
  record.x_final_meas = x_meas_final;
  if (config.record_measured_value) {
    try {
      const Vec theta_final = instance->make_theta(x_meas_final, window_meas_final);
      record.v_measured_final =
          instance->solve_at(theta_final, std::span<const ControlVec>(sol.controls), &sol.carry)
              .value;
    } catch (const std::exception& e) {
      record.failure_reason = std::string("final measured-value solve failed: ") + e.what();
      return record;
    }
  }

  record.completed = true;
  return record;
}

struct FeasibilityReport {
  bool all_inside = true;
  std::vector<int> violations;       // steps with the measured state outside the set
  std::vector<int> margin_flags;     // steps closer to the boundary than the margin
  double min_margin = kInf;
};

/// Verifies that every measured state stayed inside the state set and flags
/// states closer to its boundary than the given margin.
inline FeasibilityReport check_feasibility(const ClosedLoopRecord& record, const BoxSet& state_set,
                                           double margin) {
  FeasibilityReport report;
  for (const auto& step : record.steps) {
    const double d = state_set.boundary_distance(step.x_meas);
    report.min_margin = std::min(report.min_margin, d);
    if (!state_set.contains(step.x_meas)) {
      report.all_inside = false;
      report.violations.push_back(step.n);
    } else if (d < margin) {
      report.margin_flags.push_back(step.n);
    }
  }
  return report;
}

}  // namespace nmpc
