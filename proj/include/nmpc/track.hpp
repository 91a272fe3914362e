#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nmpc/road.hpp"

namespace nmpc {

/// Piecewise road description: flat plateaus and sinusoid sections.
struct TrackSegment {
  enum class Kind { Flat, Sine };
  Kind kind = Kind::Flat;
  double t_start = 0.0;
  double t_end = 0.0;
  double value = 0.0;      // plateau height (Flat)
  double amplitude = 0.0;  // Sine
  double period = 1.0;     // Sine
  double baseline = 0.0;   // Sine
};

inline double track_height(const std::vector<TrackSegment>& segments, double t) {
  for (const auto& s : segments) {
    if (t < s.t_start || t >= s.t_end) continue;
    if (s.kind == TrackSegment::Kind::Flat) return s.value;
    return s.baseline + s.amplitude * std::sin(2.0 * M_PI * (t - s.t_start) / s.period);
  }
  // closed right end of the final segment
  if (!segments.empty() && t == segments.back().t_end) {
    const auto& s = segments.back();
    if (s.kind == TrackSegment::Kind::Flat) return s.value;
    return s.baseline + s.amplitude * std::sin(2.0 * M_PI * (t - s.t_start) / s.period);
  }
  return 0.0;
}

/// Samples the segment description at T_p over [0, duration].
inline RoadProfile synth_track(const std::vector<TrackSegment>& segments, double t_p,
                               double duration) {
  if (segments.empty()) throw std::invalid_argument("synth_track: empty segment list");
  if (t_p <= 0.0 || duration <= 0.0)
    throw std::invalid_argument("synth_track: t_p and duration must be positive");
  RoadProfile profile;
  profile.t0 = 0.0;
  profile.sample_period = t_p;
  const auto count = static_cast<std::size_t>(std::llround(duration / t_p)) + 1;
  profile.samples.reserve(count);
  for (std::size_t j = 0; j < count; ++j)
    profile.samples.push_back(track_height(segments, static_cast<double>(j) * t_p));
  return profile;
}

/// The repository's reference test track (10 s): flat approach, a 1 Hz
/// sinusoid section, a 8 cm plateau step, a faster 2 Hz sinusoid around
/// ground level, then flat run-out.
inline std::vector<TrackSegment> reference_track_segments() {
  using K = TrackSegment::Kind;
  return {
      {K::Flat, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0},
      {K::Sine, 1.0, 3.0, 0.0, 0.05, 1.0, 0.0},
      {K::Flat, 3.0, 6.0, 0.08, 0.0, 1.0, 0.0},
      {K::Sine, 6.0, 8.0, 0.0, 0.03, 0.5, 0.0},
      {K::Flat, 8.0, 10.0, 0.0, 0.0, 1.0, 0.0},
  };
}

/// Parses a comma-separated segment spec:
///   flat:<t0>:<t1>:<height>
///   sin:<t0>:<t1>:<amplitude>:<period>[:<baseline>]
/// or the shorthand "ref" for the reference track.
inline std::vector<TrackSegment> parse_track_spec(const std::string& spec) {
  if (spec == "ref") return reference_track_segments();

  std::vector<TrackSegment> segments;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::vector<std::string> parts;
    std::stringstream ps(item);
    std::string p;
    while (std::getline(ps, p, ':')) parts.push_back(p);
    auto num = [&](std::size_t i) {
      try {
        return std::stod(parts.at(i));
      } catch (const std::exception&) {
        throw std::runtime_error("track spec: bad number in segment '" + item + "'");
      }
    };
    TrackSegment s;
    if (parts.empty()) throw std::runtime_error("track spec: empty segment");
    if (parts[0] == "flat") {
      if (parts.size() != 4) throw std::runtime_error("track spec: flat needs t0:t1:height");
      s.kind = TrackSegment::Kind::Flat;
      s.t_start = num(1);
      s.t_end = num(2);
      s.value = num(3);
    } else if (parts[0] == "sin") {
      if (parts.size() != 5 && parts.size() != 6)
        throw std::runtime_error("track spec: sin needs t0:t1:amplitude:period[:baseline]");
      s.kind = TrackSegment::Kind::Sine;
      s.t_start = num(1);
      s.t_end = num(2);
      s.amplitude = num(3);
      s.period = num(4);
      s.baseline = parts.size() == 6 ? num(5) : 0.0;
    } else {
      throw std::runtime_error("track spec: unknown segment kind '" + parts[0] + "'");
    }
    if (!(s.t_end > s.t_start))
      throw std::runtime_error("track spec: segment '" + item + "' has t1 <= t0");
    segments.push_back(s);
  }
  if (segments.empty()) throw std::runtime_error("track spec: no segments");
  return segments;
}

}  // namespace nmpc
