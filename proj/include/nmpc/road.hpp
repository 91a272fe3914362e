#pragma once

#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nmpc/core.hpp"

namespace nmpc {

/// Smooth periodic interpolant through a window of uniformly sampled road
/// heights. The window is detrended by the line through its first and last
/// sample; the residual is expanded in trigonometric modes over the window
/// length, optionally truncated at a mode cutoff. Evaluation is C-infinity
/// and provides the time derivative analytically.
class FftInterpolant {
 public:
  FftInterpolant() = default;

  /// samples.size() >= 2; dt > 0. The interpolation period is
  /// (samples.size()-1)*dt, so the detrended residual wraps around exactly.
  static FftInterpolant from_samples(std::span<const double> samples, double t0, double dt,
                                     std::optional<int> cutoff = std::nullopt) {
    if (samples.size() < 2)
      throw std::invalid_argument("FftInterpolant: need at least two samples");
    if (dt <= 0.0) throw std::invalid_argument("FftInterpolant: dt must be positive");

    FftInterpolant f;
    f.t0_ = t0;
    f.n_ = static_cast<int>(samples.size()) - 1;
    f.period_ = f.n_ * dt;
    f.offset_ = samples.front();
    f.slope_ = (samples.back() - samples.front()) / f.period_;

    const int max_mode = f.n_ / 2;
    f.max_mode_ = cutoff ? std::min(*cutoff, max_mode) : max_mode;
    if (f.max_mode_ < 0) throw std::invalid_argument("FftInterpolant: negative cutoff");
    f.coeffs_.assign(static_cast<std::size_t>(f.max_mode_) + 1, {0.0, 0.0});

    // Direct DFT of the detrended residual; only the kept modes are needed.
    const int n = f.n_;
    for (int k = 0; k <= f.max_mode_; ++k) {
      const double w = -2.0 * M_PI * k / n;
      const std::complex<double> rot(std::cos(w), std::sin(w));
      std::complex<double> z(1.0, 0.0);
      std::complex<double> acc(0.0, 0.0);
      for (int j = 0; j < n; ++j) {
        const double r = samples[static_cast<std::size_t>(j)] - (f.offset_ + f.slope_ * (j * dt));
        acc += r * z;
        z *= rot;
      }
      f.coeffs_[static_cast<std::size_t>(k)] = acc / static_cast<double>(n);
    }
    return f;
  }

  /// (height, slope) at time t.
  std::pair<double, double> eval(double t) const {
    const double tau = t - t0_;
    double value = offset_ + slope_ * tau;
    double deriv = slope_;
    if (coeffs_.empty()) return {value, deriv};

    value += coeffs_[0].real();
    const double omega = 2.0 * M_PI / period_;
    const double x = omega * tau;
    const std::complex<double> rot(std::cos(x), std::sin(x));
    std::complex<double> z = rot;
    for (int k = 1; k <= max_mode_; ++k) {
      const std::complex<double> ck = coeffs_[static_cast<std::size_t>(k)];
      const double factor = (2 * k == n_) ? 1.0 : 2.0;
      const std::complex<double> term = ck * z;
      value += factor * term.real();
      deriv -= factor * k * omega * term.imag();
      z *= rot;
    }
    return {value, deriv};
  }

  double value(double t) const { return eval(t).first; }

  /// Flat parameter vector [offset, slope, Re c0, Re c1, Im c1, ...]. Linear
  /// in the window samples, so it doubles as the reduced road parameterization
  /// of the optimal control problem.
  Vec params() const {
    Vec p(param_dim());
    p[0] = offset_;
    p[1] = slope_;
    p[2] = coeffs_.empty() ? 0.0 : coeffs_[0].real();
    for (int k = 1; k <= max_mode_; ++k) {
      p[1 + 2 * k] = coeffs_[static_cast<std::size_t>(k)].real();
      p[2 + 2 * k] = coeffs_[static_cast<std::size_t>(k)].imag();
    }
    return p;
  }

  /// Rebuilds an interpolant with this one's window geometry but new
  /// coefficients. params layout must match params().
  FftInterpolant with_params(const Vec& p) const {
    if (p.size() != param_dim())
      throw DimensionError("FftInterpolant::with_params: wrong parameter count");
    FftInterpolant f(*this);
    f.offset_ = p[0];
    f.slope_ = p[1];
    f.coeffs_[0] = {p[2], 0.0};
    for (int k = 1; k <= max_mode_; ++k)
      f.coeffs_[static_cast<std::size_t>(k)] = {p[1 + 2 * k], p[2 + 2 * k]};
    return f;
  }

  Eigen::Index param_dim() const { return 3 + 2 * static_cast<Eigen::Index>(max_mode_); }
  int max_mode() const { return max_mode_; }
  int dft_size() const { return n_; }
  double t_begin() const { return t0_; }
  double period() const { return period_; }

 private:
  double t0_ = 0.0;
  double period_ = 1.0;
  double offset_ = 0.0;
  double slope_ = 0.0;
  int n_ = 0;
  int max_mode_ = -1;
  std::vector<std::complex<double>> coeffs_;
};

/// Uniformly sampled road heights.
struct RoadProfile {
  double t0 = 0.0;
  double sample_period = 0.0;  // seconds between samples
  std::vector<double> samples;

  void validate() const {
    if (sample_period <= 0.0) throw std::invalid_argument("RoadProfile: sample period must be positive");
    if (samples.size() < 2) throw std::invalid_argument("RoadProfile: need at least two samples");
  }

  std::span<const double> window(std::size_t start, std::size_t count) const {
    if (count < 2) throw std::invalid_argument("RoadProfile::window: need at least two samples");
    if (start + count > samples.size())
      throw std::out_of_range("RoadProfile::window: range " + std::to_string(start) + "+" +
                              std::to_string(count) + " exceeds " +
                              std::to_string(samples.size()) + " samples");
    return std::span<const double>(samples).subspan(start, count);
  }

  double time_at(std::size_t index) const { return t0 + static_cast<double>(index) * sample_period; }
};

inline FftInterpolant make_interpolant(const RoadProfile& profile, std::size_t start,
                                       std::size_t count,
                                       std::optional<int> cutoff = std::nullopt) {
  return FftInterpolant::from_samples(profile.window(start, count), profile.time_at(start),
                                      profile.sample_period, cutoff);
}

/// File format: a `# t0=<sec> dt=<sec>` header line, then one height (meters)
/// per line. '#' lines elsewhere are comments.
inline RoadProfile load_road_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open road profile: " + path);

  RoadProfile profile;
  bool have_header = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      double t0 = 0.0, dt = 0.0;
      if (std::sscanf(line.c_str(), "# t0=%lf dt=%lf", &t0, &dt) == 2) {
        profile.t0 = t0;
        profile.sample_period = dt;
        have_header = true;
      }
      continue;
    }
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(line, &pos);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed sample '" +
                               line + "'");
    }
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    if (pos != line.size())
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": trailing junk '" + line +
                               "'");
    profile.samples.push_back(v);
  }
  if (!have_header)
    throw std::runtime_error(path + ": missing '# t0=<sec> dt=<sec>' header line");
  profile.validate();
  return profile;
}

inline void save_road_profile(const RoadProfile& profile, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write road profile: " + path);
  char buf[64];
  std::snprintf(buf, sizeof buf, "# t0=%.17g dt=%.17g\n", profile.t0, profile.sample_period);
  out << buf;
  for (double s : profile.samples) {
    std::snprintf(buf, sizeof buf, "%.17g\n", s);
    out << buf;
  }
}

}  // namespace nmpc
