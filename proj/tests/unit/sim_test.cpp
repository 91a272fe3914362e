#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "nmpc/plant.hpp"
#include "nmpc/quarter_car.hpp"

using namespace nmpc;

namespace {
FftInterpolant flat_road(double height = 0.0, double t0 = 0.0) {
  std::vector<double> samples(251, height);
  return FftInterpolant::from_samples(samples, t0, 0.002);
}
}  // namespace

TEST_CASE("table ingestion converts to SI") {
  const auto p = QuarterCarParams::from_table(35, 325, 0.2, 150, 20);
  CHECK(p.c_w == Catch::Approx(200.0));
  CHECK(p.d_w == Catch::Approx(150000.0));
  CHECK(p.c_c == Catch::Approx(20000.0));
  CHECK_THROWS(QuarterCarParams::from_table(35, 325, 0.0, 150, 20));
}

TEST_CASE("quarter-car right-hand side at hand-checked points") {
  const QuarterCarParams p;  // table defaults in SI
  const double u_si = 1.0 * 1e3;
  double out[4];

  const double origin[4] = {0, 0, 0, 0};
  quarter_car_rhs(p, origin, u_si, 0.0, 0.0, out);
  for (double v : out) CHECK(v == 0.0);

  const double chassis_up[4] = {0, 0, 0.01, 0};
  quarter_car_rhs(p, chassis_up, u_si, 0.0, 0.0, out);
  CHECK(out[1] == Catch::Approx(20000.0 * 0.01 / 35.0).epsilon(1e-12));   // 5.7142857
  CHECK(out[3] == Catch::Approx(-20000.0 * 0.01 / 325.0).epsilon(1e-12)); // -0.6153846

  const double wheel_up[4] = {0.01, 0, 0, 0};
  quarter_car_rhs(p, wheel_up, u_si, 0.0, 0.0, out);
  CHECK(out[1] == Catch::Approx((-20000.0 * 0.01 - 200.0 * 0.01) / 35.0).epsilon(1e-12));
  CHECK(out[3] == Catch::Approx(20000.0 * 0.01 / 325.0).epsilon(1e-12));
}

TEST_CASE("chassis jerk matches a finite difference of the acceleration") {
  const QuarterCarParams p;
  const double x[4] = {0.003, -0.02, -0.004, 0.05};
  const double u_si = 1700.0;
  const double jerk = quarter_car_jerk(p, x, u_si, 0.0, 0.0);

  // advance the state a tiny step along the flow and difference the
  // chassis acceleration
  double dx[4], x2[4], dx2[4];
  quarter_car_rhs(p, x, u_si, 0.0, 0.0, dx);
  const double h = 1e-7;
  for (int i = 0; i < 4; ++i) x2[i] = x[i] + h * dx[i];
  quarter_car_rhs(p, x2, u_si, 0.0, 0.0, dx2);
  CHECK(jerk == Catch::Approx((dx2[3] - dx[3]) / h).epsilon(1e-5));
}

TEST_CASE("passive energy is non-increasing for admissible constant damping") {
  const QuarterCarParams par;
  const QuarterCarModel model(par, 10.0, 1.0, 1e-7, 1e-9);
  const auto road = flat_road();
  const ParamSignal signal{&road};

  Vec x0(4);
  x0 << 0.01, 0.0, -0.02, 0.0;

  std::vector<double> times;
  for (int i = 1; i <= 50; ++i) times.push_back(0.01 * i);

  std::mt19937 gen(123);
  std::uniform_real_distribution<double> u_dist(0.5, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec u = Vec::Constant(1, u_dist(gen));
    const PlantStep step = model.step(x0, u, signal, 0.0, 0.5, {}, times);
    double prev = quarter_car_energy(par, x0.data());
    for (const auto& [t, x] : step.dense) {
      const double e = quarter_car_energy(par, x.data());
      CHECK(e <= prev + 1e-7);
      prev = e;
    }
  }
}

TEST_CASE("disturb respects the componentwise bounds and the seed") {
  DisturbanceSpec spec;
  spec.delta_x = 0.0;
  spec.delta_p = 0.0;
  spec.seed = 99;

  Vec x(4);
  x << 0.1, -0.2, 0.3, -0.4;
  std::vector<double> window(51, 0.02);

  {
    UniformDraw rng(spec.seed);
    const auto [xb, wb] = disturb(x, window, spec, rng);
    CHECK(xb == x);
    CHECK(wb == window);
  }

  spec.delta_x = 0.005;
  spec.delta_p = 0.005;
  UniformDraw rng_a(spec.seed);
  const auto [xa, wa] = disturb(x, window, spec, rng_a);
  UniformDraw rng_b(spec.seed);
  const auto [xb2, wb2] = disturb(x, window, spec, rng_b);
  CHECK(xa == xb2);
  CHECK(wa == wb2);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(xa[i] - x[i]) <= 0.005);
  for (std::size_t j = 0; j < window.size(); ++j) CHECK(std::abs(wa[j] - window[j]) <= 0.005);
}

TEST_CASE("list-of-samples disturb matches the contract") {
  DisturbanceSpec spec;
  spec.delta_p = 0.005;
  spec.seed = 7;
  UniformDraw rng(spec.seed);
  std::vector<Vec> p{Vec::Constant(1, 0.0), Vec::Constant(1, 0.05)};
  const auto [xb, pb] = disturb(Vec::Zero(2), std::span<const Vec>(p), spec, rng);
  CHECK(xb == Vec::Zero(2));
  REQUIRE(pb.size() == 2);
  for (std::size_t k = 0; k < 2; ++k)
    CHECK(std::abs(pb[k][0] - p[k][0]) <= 0.005);
}

TEST_CASE("plant step with zero bounds equals the nominal model step") {
  const QuarterCarModel model(QuarterCarParams{}, 10.0, 1.0);
  const auto road = flat_road(0.0);
  const ParamSignal signal{&road};

  Vec x0(4);
  x0 << 0.005, 0.0, -0.01, 0.02;
  const Vec u = Vec::Constant(1, 1.2);

  DisturbanceSpec spec;  // all bounds zero
  UniformDraw rng(1);
  const PlantStep nominal = model.step(x0, u, signal, 0.0, 0.1);
  const PlantStep plant = step_plant(model, x0, u, signal, 0.0, 0.1, spec, rng);
  CHECK(plant.x_next == nominal.x_next);
  CHECK(plant.stage_cost == nominal.stage_cost);
}

TEST_CASE("equilibrium stays put under any admissible control") {
  const QuarterCarModel model(QuarterCarParams{}, 10.0, 1.0);
  const auto road = flat_road(0.0);
  const ParamSignal signal{&road};
  DisturbanceSpec spec;
  UniformDraw rng(1);
  const PlantStep step =
      step_plant(model, Vec::Zero(4), Vec::Constant(1, 2.5), signal, 0.0, 0.1, spec, rng);
  CHECK(step.x_next.lpNorm<Eigen::Infinity>() <= 1e-15);
  CHECK(step.stage_cost <= 1e-15);
}

TEST_CASE("disturbed plant trajectory is reproducible for a fixed seed") {
  const QuarterCarModel model(QuarterCarParams{}, 10.0, 1.0);
  const auto road = flat_road(0.01);
  const ParamSignal signal{&road};

  DisturbanceSpec spec;
  spec.delta_p = 0.005;
  spec.delta_f = 1e-5;
  spec.seed = 42;

  auto run = [&] {
    UniformDraw rng(spec.seed);
    Vec x = Vec::Zero(4);
    double hash = 0.0;
    for (int n = 0; n < 5; ++n) {
      const PlantStep step =
          step_plant(model, x, Vec::Constant(1, 1.0), signal, 0.1 * n, 0.1, spec, rng);
      x = step.x_next;
      hash += x.sum() + step.stage_cost;
    }
    return hash;
  };
  CHECK(run() == run());
}
