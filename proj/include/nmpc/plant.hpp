#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "nmpc/core.hpp"
#include "nmpc/integrate.hpp"
#include "nmpc/quarter_car.hpp"
#include "nmpc/road.hpp"

namespace nmpc {

/// Continuous parameter signal driving a plant over a control interval.
/// Plants that take no exogenous signal ignore it.
struct ParamSignal {
  const FftInterpolant* road = nullptr;
};

struct PlantStep {
  Vec x_next;
  double stage_cost = 0.0;
  std::vector<double> nodes;                   // integration grid actually used
  std::vector<std::pair<double, Vec>> dense;   // optional state samples
};

/// Discrete-time plant induced by sampled integration: one control interval
/// of dynamics plus the accumulated stage cost.
class PlantModel {
 public:
  virtual ~PlantModel() = default;
  virtual int state_dim() const = 0;
  virtual int control_dim() const = 0;

  /// Advance from x over [t0, t0+T] under constant control u. When
  /// frozen_nodes is non-empty the integration reuses that grid instead of
  /// adapting; output_times requests dense state samples.
  virtual PlantStep step(const Vec& x, const Vec& u, const ParamSignal& p, double t0, double T,
                         std::span<const double> frozen_nodes = {},
                         std::span<const double> output_times = {}) const = 0;
};

/// Quarter car with comfort/safety stage cost. Controls are passed in
/// kN s/m (the published control set lives in those units) and converted
/// internally; everything else is SI.
class QuarterCarModel : public PlantModel {
 public:
  QuarterCarModel(QuarterCarParams params, double mu_comfort, double mu_safety,
                  double ode_rel_tol = 1e-6, double ode_abs_tol = 1e-6)
      : par_(params), mu_comfort_(mu_comfort), mu_safety_(mu_safety), rel_tol_(ode_rel_tol),
        abs_tol_(ode_abs_tol) {
    par_.validate();
  }

  int state_dim() const override { return 4; }
  int control_dim() const override { return 1; }

  const QuarterCarParams& params() const { return par_; }
  double mu_comfort() const { return mu_comfort_; }
  double mu_safety() const { return mu_safety_; }

  PlantStep step(const Vec& x, const Vec& u, const ParamSignal& p, double t0, double T,
                 std::span<const double> frozen_nodes = {},
                 std::span<const double> output_times = {}) const override {
    if (x.size() != 4) throw DimensionError("QuarterCarModel: state must be 4-dimensional");
    if (u.size() != 1) throw DimensionError("QuarterCarModel: control must be scalar");
    if (!p.road) throw std::invalid_argument("QuarterCarModel: missing road signal");

    const double u_si = u[0] * 1e3;
    const FftInterpolant& road = *p.road;
    OdeRhs rhs = [this, u_si, &road](double t, const Vec& y, Vec& dy) {
      const auto [h, hdot] = road.eval(t);
      quarter_car_rhs(par_, y.data(), u_si, h, hdot, dy.data());
      const double jerk = quarter_car_jerk(par_, y.data(), u_si, h, hdot);
      const double force = tire_force_deviation(par_, y.data(), h, hdot);
      dy[4] = mu_comfort_ * jerk * jerk + mu_safety_ * force * force;
    };

    Vec y0(5);
    y0.head(4) = x;
    y0[4] = 0.0;

    OdeSolution sol;
    if (!frozen_nodes.empty()) {
      sol = integrate_nodes(rhs, y0, frozen_nodes);
    } else {
      OdeProblem prob{rhs, t0, t0 + T, y0, rel_tol_, abs_tol_};
      // stability ceiling of the explicit stepper for the tire mode
      prob.max_step = 2.8 * par_.m_w / (par_.d_w + u_si);
      sol = integrate(prob, output_times);
    }

    PlantStep out;
    out.x_next = sol.y_end.head(4);
    if (out.x_next.lpNorm<Eigen::Infinity>() > 1e6)
      throw IntegrationFailure("QuarterCarModel: state blow-up (unstable step grid)", t0 + T,
                               sol.y_end);
    // the frozen-grid quadrature of a boundary layer can dip slightly negative
    out.stage_cost = std::max(sol.y_end[4], 0.0);
    out.nodes = std::move(sol.nodes);
    out.dense.reserve(sol.dense.size());
    for (auto& [t, y] : sol.dense) out.dense.emplace_back(t, y.head(4).eval());
    return out;
  }

 private:
  QuarterCarParams par_;
  double mu_comfort_;
  double mu_safety_;
  double rel_tol_;
  double abs_tol_;
};

/// Componentwise uniform disturbance bounds plus the run seed.
struct DisturbanceSpec {
  double delta_x = 0.0;  // state measurement bound, per component
  double delta_p = 0.0;  // road sample bound, per sample
  double delta_f = 0.0;  // additive plant-model mismatch, per component
  std::uint64_t seed = 0;

  bool any() const { return delta_x > 0.0 || delta_p > 0.0 || delta_f > 0.0; }
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Deterministic uniform draws, independent of the standard library's
/// distribution implementation.
class UniformDraw {
 public:
  explicit UniformDraw(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [-half_width, +half_width]; zero width costs no draw.
  double symmetric(double half_width) {
    if (half_width == 0.0) return 0.0;
    const std::uint64_t bits = engine_() >> 11;  // 53 random bits
    const double u = static_cast<double>(bits) * 0x1.0p-53;  // [0, 1)
    return (2.0 * u - 1.0) * half_width;
  }

  Vec perturb(const Vec& x, double half_width) {
    Vec out = x;
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += symmetric(half_width);
    return out;
  }

  std::vector<double> perturb(std::span<const double> samples, double half_width) {
    std::vector<double> out(samples.begin(), samples.end());
    for (double& s : out) s += symmetric(half_width);
    return out;
  }

  /// Derive an independent stream for a named sub-purpose.
  static UniformDraw derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed ^ (0xA076'1D64'78BD'642Full * (stream + 1));
    return UniformDraw(detail::splitmix64(s));
  }

 private:
  std::mt19937_64 engine_;
};

/// Bounded measurement disturbance of a state and a parameter-sample list.
inline std::pair<Vec, std::vector<Vec>> disturb(const Vec& x_nominal,
                                                std::span<const Vec> p_nominal,
                                                const DisturbanceSpec& spec, UniformDraw& rng) {
  Vec x_bar = rng.perturb(x_nominal, spec.delta_x);
  std::vector<Vec> p_bar;
  p_bar.reserve(p_nominal.size());
  for (const Vec& p : p_nominal) p_bar.push_back(rng.perturb(p, spec.delta_p));
  return {std::move(x_bar), std::move(p_bar)};
}

/// Scalar-window convenience used by the closed loop.
inline std::pair<Vec, std::vector<double>> disturb(const Vec& x_nominal,
                                                   std::span<const double> window,
                                                   const DisturbanceSpec& spec,
                                                   UniformDraw& rng) {
  Vec x_bar = rng.perturb(x_nominal, spec.delta_x);
  std::vector<double> w_bar = rng.perturb(window, spec.delta_p);
  return {std::move(x_bar), std::move(w_bar)};
}

/// True-plant transition: integrate from the measured state with the measured
/// parameter signal, then add the plant-model mismatch draw.
inline PlantStep step_plant(const PlantModel& model, const Vec& x_meas, const Vec& u,
                            const ParamSignal& p_meas, double t0, double T,
                            const DisturbanceSpec& spec, UniformDraw& rng) {
  PlantStep out = model.step(x_meas, u, p_meas, t0, T);
  if (spec.delta_f > 0.0) out.x_next = rng.perturb(out.x_next, spec.delta_f);
  return out;
}

}  // namespace nmpc
