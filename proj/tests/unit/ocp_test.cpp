#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "nmpc/ocp.hpp"
#include "nmpc/quarter_car.hpp"
#include "nmpc/track.hpp"
#include "../support/test_plants.hpp"

using namespace nmpc;
using nmpc::testing::LinearTestPlant;

namespace {

std::vector<double> window_from_track(const std::vector<TrackSegment>& segments, double t_p,
                                      std::size_t count) {
  std::vector<double> w(count);
  for (std::size_t j = 0; j < count; ++j) w[j] = track_height(segments, t_p * static_cast<double>(j));
  return w;
}

struct QuarterCarFixture {
  QuarterCarModel model{QuarterCarParams{}, 10.0, 1.0};
  ParametricOcp ocp;
  std::vector<double> window;

  explicit QuarterCarFixture(double road_amplitude = 0.0, int horizon = 5) {
    ocp.model = &model;
    ocp.horizon = horizon;
    ocp.control_set = BoxSet::interval(0.5, 3.0);
    ocp.T_u = 0.1;
    const std::size_t count = static_cast<std::size_t>(horizon) * 50 + 1;
    if (road_amplitude == 0.0) {
      window.assign(count, 0.0);
    } else {
      window = window_from_track(
          {{TrackSegment::Kind::Sine, 0.0, 10.0, 0.0, road_amplitude, 0.5, 0.0}}, 0.002, count);
    }
  }

  OcpInstance instance(Vec x0, std::optional<int> cutoff = 10, OcpOptions opts = {}) const {
    return OcpInstance(ocp, std::move(x0), window, 0.0, 0.002, cutoff, opts);
  }
};

std::vector<ControlVec> constant_controls(int horizon, double value) {
  return std::vector<ControlVec>(static_cast<std::size_t>(horizon), Vec::Constant(1, value));
}

}  // namespace

TEST_CASE("equilibrium rollout stays at the origin with zero cost") {
  const QuarterCarFixture fix;
  const auto inst = fix.instance(Vec::Zero(4));
  const auto u = constant_controls(5, 1.3);
  const Trajectory traj = inst.rollout(u);
  traj.validate();
  for (const auto& x : traj.states) CHECK(x.lpNorm<Eigen::Infinity>() <= 1e-14);
  CHECK(inst.eval_cost(u) <= 1e-14);
}

TEST_CASE("linear test plant rollout matches hand iteration") {
  LinearTestPlant plant(1);
  ParametricOcp ocp;
  ocp.model = &plant;
  ocp.horizon = 2;
  ocp.control_set = BoxSet::unbounded(1);
  ocp.T_u = 1.0;
  std::vector<double> window(3, 0.0);
  OcpInstance inst(ocp, Vec::Constant(1, 1.0), window, 0.0, 1.0, std::nullopt);

  std::vector<ControlVec> u{Vec::Constant(1, -1.0), Vec::Constant(1, 0.0)};
  const Trajectory traj = inst.rollout(u);
  REQUIRE(traj.states.size() == 3);
  CHECK(traj.states[0][0] == 1.0);
  CHECK(traj.states[1][0] == 0.0);
  CHECK(traj.states[2][0] == 0.0);

  // rollout cost agrees with eval_cost: sum of (x+u)^2 + u^2 per step
  CHECK(inst.eval_cost(u) == Catch::Approx(1.0));
}

TEST_CASE("control outside the box is rejected by rollout") {
  const QuarterCarFixture fix;
  const auto inst = fix.instance(Vec::Zero(4));
  CHECK_THROWS(inst.rollout(constant_controls(5, 0.2)));
  CHECK_THROWS(inst.eval_cost(constant_controls(5, 5.0)));
}

TEST_CASE("stage cost matches an independent Simpson quadrature") {
  QuarterCarFixture fix(0.01);
  const QuarterCarModel model(QuarterCarParams{}, 10.0, 1.0, 1e-9, 1e-9);
  fix.ocp.model = &model;

  // start on the slow manifold (wheel glued to the road) so the quadrature
  // oracle does not have to resolve the millisecond tire boundary layer
  const FftInterpolant road = FftInterpolant::from_samples(fix.window, 0.0, 0.002);
  const auto [p0, pdot0] = road.eval(0.0);
  Vec x0(4);
  x0 << p0, pdot0, -0.004, 0.01;

  const auto inst = fix.instance(x0, std::nullopt);
  const auto u = constant_controls(5, 1.5);
  const double cost = inst.eval_cost(u);

  // oracle: dense 4-state trajectory plus Simpson sums of the integrand
  const int simpson_cells = 1000;  // per control interval
  double oracle = 0.0;
  Vec x = x0;
  for (int k = 0; k < 5; ++k) {
    const double t0 = 0.1 * k;
    std::vector<double> times;
    for (int i = 0; i <= 2 * simpson_cells; ++i)
      times.push_back(t0 + 0.1 * i / (2.0 * simpson_cells));
    const PlantStep step = model.step(x, u[static_cast<std::size_t>(k)], ParamSignal{&road}, t0,
                                      0.1, {}, times);
    auto integrand = [&](double t, const Vec& state) {
      const auto [h, hdot] = road.eval(t);
      const double u_si = 1.5 * 1e3;
      const double jerk = quarter_car_jerk(model.params(), state.data(), u_si, h, hdot);
      const double force = tire_force_deviation(model.params(), state.data(), h, hdot);
      return 10.0 * jerk * jerk + 1.0 * force * force;
    };
    const double h_cell = 0.1 / simpson_cells;
    for (int c = 0; c < simpson_cells; ++c) {
      const auto& [ta, ya] = step.dense[static_cast<std::size_t>(2 * c)];
      const auto& [tm, ym] = step.dense[static_cast<std::size_t>(2 * c + 1)];
      const auto& [tb, yb] = step.dense[static_cast<std::size_t>(2 * c + 2)];
      oracle += h_cell / 6.0 * (integrand(ta, ya) + 4.0 * integrand(tm, ym) + integrand(tb, yb));
    }
    x = step.x_next;
  }
  CHECK(cost == Catch::Approx(oracle).epsilon(1e-5));
}

TEST_CASE("solve returns zero value at the equilibrium") {
  const QuarterCarFixture fix;
  const auto inst = fix.instance(Vec::Zero(4));
  const OcpSolution sol = inst.solve();
  CHECK(sol.value <= 1e-12);
  for (const auto& u : sol.controls) CHECK(fix.ocp.control_set.contains(u));
}

TEST_CASE("solve satisfies feasibility and the fixed-point property") {
  const QuarterCarFixture fix(0.01);
  Vec x0(4);
  x0 << 0.0, 0.0, 0.01, 0.0;
  const auto inst = fix.instance(x0);
  const OcpSolution sol = inst.solve();
  CHECK(sol.nlp.converged);
  CHECK(sol.value >= 0.0);
  for (const auto& u : sol.controls) CHECK(fix.ocp.control_set.contains(u, 1e-12));

  const OcpSolution again = inst.solve(std::span<const ControlVec>(sol.controls), &sol.carry);
  CHECK(std::abs(again.nlp.value - sol.nlp.value) < 1e-8);
}

TEST_CASE("shift_warm_start drops the head and repeats the tail") {
  const auto u = std::vector<ControlVec>{Vec::Constant(1, 1.0), Vec::Constant(1, 2.0),
                                         Vec::Constant(1, 3.0)};
  const auto shifted = shift_warm_start(u);
  REQUIRE(shifted.size() == 3);
  CHECK(shifted[0][0] == 2.0);
  CHECK(shifted[1][0] == 3.0);
  CHECK(shifted[2][0] == 3.0);

  const auto constant = constant_controls(4, 1.7);
  const auto shifted_const = shift_warm_start(constant);
  for (const auto& c : shifted_const) CHECK(c[0] == 1.7);
}

TEST_CASE("theta packing is consistent") {
  const QuarterCarFixture fix(0.02);
  Vec x0(4);
  x0 << 0.001, 0.0, 0.002, 0.0;
  const auto inst = fix.instance(x0);
  CHECK(inst.theta_nominal() == inst.make_theta(x0, fix.window));
  CHECK(inst.dim_theta() == 4 + 3 + 2 * 10);

  // frozen-grid objective agrees with the adaptive evaluation
  const auto u = constant_controls(5, 1.1);
  const double frozen = inst.frozen_cost(u, inst.theta_nominal());
  const double adaptive = inst.eval_cost(u);
  CHECK(frozen == Catch::Approx(adaptive).epsilon(1e-4));
}

TEST_CASE("horizon below two is rejected") {
  QuarterCarFixture fix;
  fix.ocp.horizon = 1;
  std::vector<double> window(51, 0.0);
  CHECK_THROWS(OcpInstance(fix.ocp, Vec::Zero(4), window, 0.0, 0.002, std::nullopt));
}
