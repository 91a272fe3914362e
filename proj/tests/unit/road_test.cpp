#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <random>

#include "nmpc/road.hpp"
#include "nmpc/track.hpp"

using namespace nmpc;

TEST_CASE("constant samples give a constant interpolant") {
  std::vector<double> samples(251, 0.1);
  const auto f = FftInterpolant::from_samples(samples, 0.0, 0.002);
  for (double t : {0.0, 0.123, 0.25, 0.5}) {
    const auto [v, d] = f.eval(t);
    CHECK(v == Catch::Approx(0.1).margin(1e-12));
    CHECK(d == Catch::Approx(0.0).margin(1e-9));
  }
}

TEST_CASE("full-period sinusoid is reproduced off the nodes") {
  const double dt = 0.01;
  const int m = 101;  // window [0, 1], four full periods of L = 0.25
  const double L = 0.25;
  std::vector<double> samples(m);
  for (int j = 0; j < m; ++j) samples[j] = std::sin(2.0 * M_PI * (j * dt) / L);
  const auto f = FftInterpolant::from_samples(samples, 0.0, dt);

  std::mt19937 gen(3);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double t = dist(gen);
    const auto [v, d] = f.eval(t);
    CHECK(std::abs(v - std::sin(2.0 * M_PI * t / L)) <= 1e-9);
    CHECK(std::abs(d - (2.0 * M_PI / L) * std::cos(2.0 * M_PI * t / L)) <= 1e-8);
  }
}

TEST_CASE("interpolation reproduces every windowed sample") {
  std::mt19937 gen(11);
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  std::vector<double> samples(251);
  for (auto& s : samples) s = dist(gen);
  const auto f = FftInterpolant::from_samples(samples, 1.5, 0.002);
  for (int j = 0; j < 251; ++j)
    CHECK(std::abs(f.value(1.5 + j * 0.002) - samples[static_cast<std::size_t>(j)]) <= 1e-9);
}

TEST_CASE("cutoff truncates the parameter vector") {
  std::vector<double> samples(251, 0.0);
  samples[100] = 0.05;
  const auto full = FftInterpolant::from_samples(samples, 0.0, 0.002);
  const auto cut = FftInterpolant::from_samples(samples, 0.0, 0.002, 10);
  CHECK(full.param_dim() == 3 + 2 * 125);
  CHECK(cut.param_dim() == 3 + 2 * 10);
  CHECK(cut.max_mode() == 10);
}

TEST_CASE("parameter round trip preserves evaluation") {
  std::mt19937 gen(5);
  std::uniform_real_distribution<double> dist(-0.05, 0.05);
  std::vector<double> samples(51);
  for (auto& s : samples) s = dist(gen);
  const auto f = FftInterpolant::from_samples(samples, 0.0, 0.002, 8);
  const auto g = f.with_params(f.params());
  for (double t : {0.0, 0.33 * 0.1, 0.05, 0.1}) {
    CHECK(g.eval(t).first == Catch::Approx(f.eval(t).first).margin(1e-15));
    CHECK(g.eval(t).second == Catch::Approx(f.eval(t).second).margin(1e-15));
  }
}

TEST_CASE("window bounds are checked") {
  RoadProfile profile;
  profile.t0 = 0.0;
  profile.sample_period = 0.002;
  profile.samples.assign(100, 0.0);
  CHECK_THROWS_AS(profile.window(50, 51), std::out_of_range);
  CHECK_NOTHROW(profile.window(50, 50));
  CHECK_THROWS(make_interpolant(profile, 99, 5));
}

TEST_CASE("road profile file round trip and errors") {
  RoadProfile profile;
  profile.t0 = 0.25;
  profile.sample_period = 0.002;
  profile.samples = {0.0, 0.01, 0.02, 0.015};

  const std::string path = "road_roundtrip_test.txt";
  save_road_profile(profile, path);
  const RoadProfile loaded = load_road_profile(path);
  CHECK(loaded.t0 == profile.t0);
  CHECK(loaded.sample_period == profile.sample_period);
  CHECK(loaded.samples == profile.samples);
  std::remove(path.c_str());

  {
    std::ofstream out("road_bad_test.txt");
    out << "# t0=0 dt=0.002\n0.01\nnot_a_number\n";
  }
  CHECK_THROWS_WITH(load_road_profile("road_bad_test.txt"),
                    Catch::Matchers::ContainsSubstring(":3"));
  std::remove("road_bad_test.txt");

  {
    std::ofstream out("road_nohdr_test.txt");
    out << "0.01\n0.02\n";
  }
  CHECK_THROWS(load_road_profile("road_nohdr_test.txt"));
  std::remove("road_nohdr_test.txt");
}

TEST_CASE("synthetic tracks") {
  const auto flat = synth_track({{TrackSegment::Kind::Flat, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0}},
                                0.002, 1.0);
  for (double s : flat.samples) CHECK(s == 0.0);

  const double a = 0.03, period = 0.5, t_p = 0.002;
  const auto sine = synth_track({{TrackSegment::Kind::Sine, 0.0, 2.0, 0.0, a, period, 0.0}},
                                t_p, 2.0);
  double max_abs = 0.0;
  for (double s : sine.samples) max_abs = std::max(max_abs, std::abs(s));
  CHECK(max_abs <= a + 1e-15);
  CHECK(max_abs >= a * std::cos(M_PI * t_p / period) - 1e-15);

  const auto ref = synth_track(reference_track_segments(), 0.002, 10.0);
  CHECK(ref.samples.size() == 5001);
  CHECK(ref.samples.front() == 0.0);
  CHECK(ref.samples.back() == 0.0);
  CHECK(ref.samples[static_cast<std::size_t>(4.0 / 0.002)] == Catch::Approx(0.08));
}

TEST_CASE("track spec parsing") {
  const auto segments = parse_track_spec("flat:0:1:0,sin:1:3:0.05:1,flat:3:6:0.08");
  CHECK(segments.size() == 3);
  CHECK(segments[1].amplitude == 0.05);
  CHECK(parse_track_spec("ref").size() == reference_track_segments().size());
  CHECK_THROWS(parse_track_spec("warp:0:1"));
  CHECK_THROWS(parse_track_spec("flat:1:0:0"));
}
