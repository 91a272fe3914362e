#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "nmpc/integrate.hpp"

using namespace nmpc;

namespace {
OdeProblem exponential(double t_end = 1.0, double tol = 1e-6) {
  OdeProblem p;
  p.rhs = [](double, const Vec& y, Vec& dy) { dy[0] = y[0]; };
  p.t_begin = 0.0;
  p.t_end = t_end;
  p.y0 = Vec::Constant(1, 1.0);
  p.rel_tol = tol;
  p.abs_tol = tol;
  return p;
}
}  // namespace

TEST_CASE("constant solution for zero rhs") {
  OdeProblem p;
  p.rhs = [](double, const Vec&, Vec& dy) { dy.setZero(); };
  p.t_begin = 0.0;
  p.t_end = 1.0;
  p.y0 = Vec::Constant(1, 1.0);
  const OdeSolution sol = integrate(p);
  CHECK(sol.y_end[0] == 1.0);
  CHECK(sol.accepted_steps >= 1);
}

TEST_CASE("exponential growth hits the closed form") {
  const OdeSolution sol = integrate(exponential());
  CHECK(std::abs(sol.y_end[0] - std::exp(1.0)) <= 1e-6);
}

TEST_CASE("harmonic oscillator over half a period") {
  OdeProblem p;
  p.rhs = [](double, const Vec& y, Vec& dy) {
    dy[0] = y[1];
    dy[1] = -y[0];
  };
  p.t_begin = 0.0;
  p.t_end = M_PI;
  p.y0 = Vec::Zero(2);
  p.y0[0] = 1.0;
  const OdeSolution sol = integrate(p);
  CHECK(std::abs(sol.y_end[0] + 1.0) <= 1e-6);
  CHECK(std::abs(sol.y_end[1]) <= 1e-6);
}

TEST_CASE("fixed-step mode shows fifth-order convergence") {
  const double exact = std::exp(1.0);
  double log_ratio_sum = 0.0;
  double prev_err = 0.0;
  long n = 10;
  for (int level = 0; level < 5; ++level) {
    const OdeSolution sol = integrate_fixed(exponential(), n);
    const double err = std::abs(sol.y_end[0] - exact);
    REQUIRE(err > 0.0);
    if (level > 0) log_ratio_sum += std::log2(prev_err / err);
    prev_err = err;
    n *= 2;
  }
  const double mean_order = log_ratio_sum / 4.0;
  CHECK(mean_order >= 4.5);
}

TEST_CASE("dense output matches the accepted step endpoint") {
  std::vector<double> times{0.3, 1.0};
  const OdeSolution sol = integrate(exponential(), times);
  REQUIRE(sol.dense.size() == 2);
  CHECK(sol.dense[1].first == 1.0);
  CHECK(std::abs(sol.dense[1].second[0] - sol.y_end[0]) <= 1e-12 * std::abs(sol.y_end[0]));
  CHECK(std::abs(sol.dense[0].second[0] - std::exp(0.3)) <= 1e-6);
}

TEST_CASE("forward then backward recovers the initial state") {
  const OdeSolution fwd = integrate(exponential());
  OdeProblem back = exponential();
  back.t_begin = 1.0;
  back.t_end = 0.0;
  back.y0 = fwd.y_end;
  const OdeSolution sol = integrate(back);
  CHECK(std::abs(sol.y_end[0] - 1.0) <= 10.0 * back.rel_tol);
}

TEST_CASE("singular rhs fails with context") {
  OdeProblem p;
  p.rhs = [](double t, const Vec&, Vec& dy) { dy[0] = 1.0 / (1.0 - t); };
  p.t_begin = 0.0;
  p.t_end = 2.0;
  p.y0 = Vec::Zero(1);
  try {
    integrate(p);
    FAIL("expected IntegrationFailure");
  } catch (const IntegrationFailure& e) {
    CHECK(e.t_last < 1.0);
    CHECK(e.y_last.size() == 1);
  }
}

TEST_CASE("non-finite rhs fails") {
  OdeProblem p;
  p.rhs = [](double, const Vec&, Vec& dy) { dy[0] = std::nan(""); };
  p.t_begin = 0.0;
  p.t_end = 1.0;
  p.y0 = Vec::Zero(1);
  CHECK_THROWS_AS(integrate(p), IntegrationFailure);
}

TEST_CASE("integration is deterministic") {
  const OdeSolution a = integrate(exponential());
  const OdeSolution b = integrate(exponential());
  CHECK(a.y_end[0] == b.y_end[0]);
  CHECK(a.nodes == b.nodes);
}

TEST_CASE("frozen-node re-evaluation reproduces the adaptive endpoint") {
  const OdeSolution adaptive = integrate(exponential());
  OdeProblem p = exponential();
  const OdeSolution frozen = integrate_nodes(p.rhs, p.y0, adaptive.nodes);
  CHECK(frozen.y_end[0] == Catch::Approx(adaptive.y_end[0]).epsilon(1e-14));
}
