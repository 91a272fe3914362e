#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nmpc/core.hpp"
#include "nmpc/mpc.hpp"
#include "nmpc/plant.hpp"

namespace nmpc {

struct AlphaEstimate {
  std::optional<double> alpha;   // in (0, 1]; empty when no step was assessable
  double min_quotient = kInf;    // uncapped minimum over assessed steps
  std::vector<int> violations;   // steps with nonpositive decrease despite cost
  int evaluated_steps = 0;
};

/// Suboptimality degree from a value sequence v(0..M) and the stage costs
/// l(0..M-1) consumed between consecutive values: the smallest per-step
/// quotient (v(n) - v(n+1)) / l(n) over steps with l(n) above the floor.
/// Nonpositive quotients are reported as Lyapunov violations and excluded.
inline AlphaEstimate estimate_alpha(std::span<const double> values,
                                    std::span<const double> stage_costs,
                                    double stage_floor = 1e-12) {
  if (values.size() != stage_costs.size() + 1)
    throw std::invalid_argument("estimate_alpha: need one more value than stage costs");

  AlphaEstimate est;
  for (std::size_t n = 0; n < stage_costs.size(); ++n) {
    if (stage_costs[n] <= stage_floor) continue;
    const double quotient = (values[n] - values[n + 1]) / stage_costs[n];
    if (quotient <= 0.0) {
      est.violations.push_back(static_cast<int>(n));
      continue;
    }
    est.min_quotient = std::min(est.min_quotient, quotient);
    ++est.evaluated_steps;
  }
  if (est.evaluated_steps > 0) est.alpha = std::min(est.min_quotient, 1.0);
  return est;
}

inline AlphaEstimate estimate_alpha(const ClosedLoopRecord& record, double stage_floor = 1e-12) {
  return estimate_alpha(record.nominal_values(), record.nominal_stage_costs(), stage_floor);
}

struct AffineFit {
  double L = 0.0;
  double J = 0.0;
};

/// Smallest affine envelope delta <= L*s + J (L, J >= 0) over observations
/// (s, delta), minimizing L + J/mean(s). Exact two-variable linear program
/// solved by vertex enumeration on the upper envelope.
inline AffineFit fit_affine_bounds(std::span<const std::pair<double, double>> observations) {
  if (observations.empty()) return {0.0, 0.0};

  double max_delta = 0.0, max_ratio = 0.0, mean_s = 0.0;
  bool any_positive_s = false;
  for (const auto& [s, delta] : observations) {
    if (s < 0.0 || delta < 0.0)
      throw std::invalid_argument("fit_affine_bounds: observations must be nonnegative");
    max_delta = std::max(max_delta, delta);
    mean_s += s;
    if (s > 0.0) {
      any_positive_s = true;
      max_ratio = std::max(max_ratio, delta / s);
    }
  }
  mean_s /= static_cast<double>(observations.size());
  if (!any_positive_s) return {0.0, max_delta};
  const double weight = mean_s > 0.0 ? 1.0 / mean_s : 1.0;

  auto feasible = [&](double L, double J) {
    for (const auto& [s, delta] : observations)
      if (delta > L * s + J + 1e-12 * std::max(1.0, delta)) return false;
    return true;
  };

  // candidate vertices: J = 0 (steepest ratio), L = 0 (largest jump), and
  // every line through two observations
  AffineFit best{max_ratio, 0.0};
  if (!feasible(best.L, best.J)) best = {max_ratio, max_delta};  // zero-deviation jumps present
  double best_objective = best.L + weight * best.J;
  auto consider = [&](double L, double J) {
    if (L < 0.0 || J < 0.0 || !feasible(L, J)) return;
    const double objective = L + weight * J;
    if (objective < best_objective - 1e-15) {
      best = {L, J};
      best_objective = objective;
    }
  };
  consider(0.0, max_delta);
  for (std::size_t i = 0; i < observations.size(); ++i)
    for (std::size_t j = i + 1; j < observations.size(); ++j) {
      const auto& [si, di] = observations[i];
      const auto& [sj, dj] = observations[j];
      if (si == sj) continue;
      const double L = (di - dj) / (si - sj);
      consider(L, di - L * si);
    }
  return best;
}

inline AffineFit fit_affine_bounds(std::span<const std::tuple<double, double, double>> triples) {
  std::vector<std::pair<double, double>> obs;
  obs.reserve(triples.size());
  for (const auto& [dx, dp, delta] : triples) obs.emplace_back(dx + dp, delta);
  return fit_affine_bounds(obs);
}

/// Minimal disturbance offset compatible with the fitted affine bounds:
///   L_l (dx + dp) + J_l + (L_V (2 dx + 3 dp) + 2 J_V) / alpha.
inline double compute_epsilon(double L_l, double J_l, double L_V, double J_V, double dx, double dp,
                              double alpha) {
  if (!(alpha > 0.0) || alpha > 1.0)
    throw std::invalid_argument("compute_epsilon: alpha must be in (0, 1]");
  if (L_l < 0 || J_l < 0 || L_V < 0 || J_V < 0 || dx < 0 || dp < 0)
    throw std::invalid_argument("compute_epsilon: constants must be nonnegative");
  return L_l * (dx + dp) + J_l + (L_V * (2.0 * dx + 3.0 * dp) + 2.0 * J_V) / alpha;
}

struct ModifiedCostResult {
  double v_bar = 0.0;        // sum of clipped stage costs outside the practical set
  double sigma = 0.0;        // smallest recorded value after entering the set
  double bound_ratio = 0.0;  // alpha * v_bar / (V(0) - sigma)
  bool bound_violated = false;
  int outside_steps = 0;
  int clipped_to_zero = 0;
};

/// Performance accounting with the offset stage cost: steps inside the
/// practical set contribute nothing, the rest contribute max(l - eps, 0).
/// values has one more entry than stage_costs (the closing solve).
inline ModifiedCostResult modified_closed_loop_cost(std::span<const double> stage_costs,
                                                    std::span<const double> values,
                                                    std::span<const std::uint8_t> in_practical_set,
                                                    double eps, double alpha) {
  if (values.size() != stage_costs.size() + 1)
    throw std::invalid_argument("modified_closed_loop_cost: need one more value than stage costs");
  if (in_practical_set.size() != stage_costs.size())
    throw std::invalid_argument("modified_closed_loop_cost: one membership flag per step");
  if (eps < 0.0) throw std::invalid_argument("modified_closed_loop_cost: eps must be nonnegative");

  ModifiedCostResult out;
  std::optional<std::size_t> entry;
  for (std::size_t n = 0; n < stage_costs.size(); ++n) {
    if (in_practical_set[n]) {
      if (!entry) entry = n;
      continue;
    }
    ++out.outside_steps;
    const double clipped = std::max(stage_costs[n] - eps, 0.0);
    if (clipped == 0.0) ++out.clipped_to_zero;
    out.v_bar += clipped;
  }

  double sigma = kInf;
  if (entry) {
    for (std::size_t n = *entry; n < values.size(); ++n) sigma = std::min(sigma, values[n]);
  } else {
    for (std::size_t n = 1; n < values.size(); ++n) sigma = std::min(sigma, values[n]);
  }
  out.sigma = sigma;

  const double budget = values.front() - sigma;
  const double lhs = alpha * out.v_bar;
  if (lhs == 0.0)
    out.bound_ratio = 0.0;
  else if (budget > 0.0)
    out.bound_ratio = lhs / budget;
  else
    out.bound_ratio = kInf;
  out.bound_violated = out.bound_ratio > 1.0 + 1e-9;
  return out;
}

/// One-interval stage cost from x under the equilibrium control on a flat
/// road: the probe that defines the practical-set proxy.
inline double practical_set_cost(const PlantModel& model, const Vec& x, const ControlVec& u_star,
                                 double T_u, std::size_t window_samples, double t_p) {
  std::vector<double> flat(window_samples, 0.0);
  const FftInterpolant road = FftInterpolant::from_samples(flat, 0.0, t_p);
  return model.step(x, u_star, ParamSignal{&road}, 0.0, T_u).stage_cost;
}

struct StabilityReport {
  std::optional<double> alpha;
  double min_quotient = kInf;
  std::vector<int> lyapunov_violations;
  double L_l = 0.0, J_l = 0.0, L_V = 0.0, J_V = 0.0;
  double delta_x_eff = 0.0, delta_p_eff = 0.0;  // Euclidean-accounted deviations used in epsilon
  double epsilon = 0.0;
  double practical_threshold = 0.0;
  int outside_steps = 0;
  double v_bar = 0.0;
  double sigma = 0.0;
  double bound_ratio = 0.0;
  bool bound_violated = false;
  bool applicable = false;  // alpha defined, so the bound could be evaluated
  std::size_t pair_count = 0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["alpha"] = alpha ? nlohmann::ordered_json(*alpha) : nlohmann::ordered_json(nullptr);
    j["min_quotient"] = std::isfinite(min_quotient) ? nlohmann::ordered_json(min_quotient)
                                                    : nlohmann::ordered_json(nullptr);
    j["lyapunov_violations"] = lyapunov_violations;
    j["L_stage"] = L_l;
    j["J_stage"] = J_l;
    j["L_value"] = L_V;
    j["J_value"] = J_V;
    j["delta_x_eff"] = delta_x_eff;
    j["delta_p_eff"] = delta_p_eff;
    j["epsilon"] = epsilon;
    j["practical_threshold"] = practical_threshold;
    j["outside_steps"] = outside_steps;
    j["modified_cost"] = v_bar;
    j["sigma"] = sigma;
    j["bound_ratio"] = bound_ratio;
    j["bound_violated"] = bound_violated;
    j["applicable"] = applicable;
    j["fitted_pairs"] = pair_count;
    return j;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "alpha = " << (alpha ? std::to_string(*alpha) : std::string("n/a")) << "\n";
    os << "lyapunov_violations = " << lyapunov_violations.size() << "\n";
    os << "L_stage = " << L_l << "\nJ_stage = " << J_l << "\n";
    os << "L_value = " << L_V << "\nJ_value = " << J_V << "\n";
    os << "delta_x_eff = " << delta_x_eff << "\ndelta_p_eff = " << delta_p_eff << "\n";
    os << "epsilon = " << epsilon << "\n";
    os << "modified_cost = " << v_bar << "\n";
    os << "sigma = " << sigma << "\n";
    os << "bound_ratio = " << bound_ratio << "\n";
    os << "bound_violated = " << (bound_violated ? "true" : "false") << "\n";
    return os.str();
  }
};

/// Builds the per-run stability diagnostics from a completed disturbed run.
///
/// The affine constants are fitted over the per-step observations
/// (measured-vs-nominal stage costs and values); the effective deviation
/// bounds take the larger of the configured componentwise bounds (converted
/// to Euclidean scale) and the realized deviations, window drift included.
inline StabilityReport build_stability_report(const ClosedLoopRecord& record,
                                              const DisturbanceSpec& spec,
                                              const PlantModel& model, const ControlVec& u_star,
                                              double T_u, double t_p) {
  StabilityReport report;
  if (record.steps.empty()) return report;

  const AlphaEstimate est = estimate_alpha(record);
  report.alpha = est.alpha;
  report.min_quotient = est.min_quotient;
  report.lyapunov_violations = est.violations;

  const int nx = model.state_dim();
  const double dx_config = spec.delta_x * std::sqrt(static_cast<double>(nx));
  const double dp_config = spec.delta_p;  // scalar samples, sup over the window

  std::vector<std::pair<double, double>> stage_pairs, value_pairs;
  double dx_eff = dx_config, dp_eff = dp_config;
  for (std::size_t n = 0; n < record.steps.size(); ++n) {
    const auto& s = record.steps[n];
    const double dev_x = metric_distance(s.x_meas, s.x_nominal);
    const double dev_p = window_sup_distance(s.window_measured, s.window_nominal);
    dx_eff = std::max(dx_eff, dev_x);
    dp_eff = std::max(dp_eff, dev_p);
    stage_pairs.emplace_back(dev_x + dev_p, std::abs(s.stage_cost - s.nominal_stage_cost));
    value_pairs.emplace_back(dev_x + dev_p, std::abs(s.v_measured - s.v_nominal));
    if (n + 1 < record.steps.size()) {
      // window drift between consecutive nominal problems
      dp_eff = std::max(dp_eff, window_sup_distance(record.steps[n + 1].window_nominal,
                                                    s.window_nominal));
    }
  }

  const AffineFit stage_fit = fit_affine_bounds(stage_pairs);
  const AffineFit value_fit = fit_affine_bounds(value_pairs);
  report.L_l = stage_fit.L;
  report.J_l = stage_fit.J;
  report.L_V = value_fit.L;
  report.J_V = value_fit.J;
  report.delta_x_eff = dx_eff;
  report.delta_p_eff = dp_eff;
  report.pair_count = stage_pairs.size() + value_pairs.size();

  if (!report.alpha) return report;  // equilibrium-like run; bound not applicable
  report.applicable = true;

  report.epsilon = compute_epsilon(report.L_l, report.J_l, report.L_V, report.J_V, dx_eff, dp_eff,
                                   *report.alpha);
  report.practical_threshold = report.epsilon;

  std::vector<std::uint8_t> inside;
  inside.reserve(record.steps.size());
  const std::size_t window_samples = record.steps.front().window_nominal.size();
  for (const auto& s : record.steps) {
    const double probe = practical_set_cost(model, s.x_meas, u_star, T_u, window_samples, t_p);
    inside.push_back(probe <= report.practical_threshold ? 1 : 0);
  }

  const auto stage = record.stage_costs();
  const auto values = record.measured_values();
  const ModifiedCostResult mod =
      modified_closed_loop_cost(stage, values, inside, report.epsilon, *report.alpha);
  report.outside_steps = mod.outside_steps;
  report.v_bar = mod.v_bar;
  report.sigma = mod.sigma;
  report.bound_ratio = mod.bound_ratio;
  report.bound_violated = mod.bound_violated;
  return report;
}

}  // namespace nmpc
