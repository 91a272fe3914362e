#pragma once

#include <cmath>
#include <stdexcept>

#include "nmpc/core.hpp"

namespace nmpc {

/// Quarter-car parameters in SI units. The published table quotes kN-based
/// values; conversion happens at ingestion (from_table).
struct QuarterCarParams {
  double m_w = 35.0;       // wheel mass, kg
  double m_c = 325.0;      // chassis mass, kg
  double c_w = 200.0;      // tire spring, N/m
  double d_w = 150000.0;   // tire damper, N s/m
  double c_c = 20000.0;    // chassis spring, N/m

  static QuarterCarParams from_table(double m_w_kg, double m_c_kg, double c_w_kn_per_m,
                                     double d_w_kns_per_m, double c_c_kn_per_m) {
    QuarterCarParams p;
    p.m_w = m_w_kg;
    p.m_c = m_c_kg;
    p.c_w = c_w_kn_per_m * 1e3;
    p.d_w = d_w_kns_per_m * 1e3;
    p.c_c = c_c_kn_per_m * 1e3;
    p.validate();
    return p;
  }

  void validate() const {
    if (!(m_w > 0 && m_c > 0 && c_w > 0 && d_w > 0 && c_c > 0))
      throw std::invalid_argument("QuarterCarParams: all parameters must be strictly positive");
  }
};

/// Suspension force transmitted between wheel and chassis; u is the
/// controllable damper coefficient in N s/m.
inline double suspension_force(const QuarterCarParams& p, const double x[4], double u) {
  return p.c_c * (x[2] - x[0]) + u * (x[3] - x[1]);
}

/// Right-hand side of the quarter-car dynamics. State (x_w, dx_w, x_c, dx_c),
/// u in N s/m, road height p_road and road slope p_dot in SI units. The
/// equilibrium sits at the origin for a flat road at height zero.
inline void quarter_car_rhs(const QuarterCarParams& p, const double x[4], double u, double p_road,
                            double p_dot, double out[4]) {
  const double f_susp = suspension_force(p, x, u);
  out[0] = x[1];
  out[1] = (f_susp - p.c_w * (x[0] - p_road) - p.d_w * (x[1] - p_dot)) / p.m_w;
  out[2] = x[3];
  out[3] = -f_susp / p.m_c;
}

/// Chassis jerk for piecewise-constant u, obtained by differentiating the
/// chassis acceleration once more along the flow.
inline double quarter_car_jerk(const QuarterCarParams& p, const double x[4], double u,
                               double p_road, double p_dot) {
  double dx[4];
  quarter_car_rhs(p, x, u, p_road, p_dot, dx);
  return (-p.c_c * (x[3] - x[1]) - u * (dx[3] - dx[1])) / p.m_c;
}

/// Deviation of the tire-surface force from its equilibrium value.
inline double tire_force_deviation(const QuarterCarParams& p, const double x[4], double p_road,
                                   double p_dot) {
  return p.c_w * (x[0] - p_road) + p.d_w * (x[1] - p_dot);
}

/// Total mechanical energy on a flat road at height zero.
inline double quarter_car_energy(const QuarterCarParams& p, const double x[4]) {
  return 0.5 * p.m_w * x[1] * x[1] + 0.5 * p.m_c * x[3] * x[3] +
         0.5 * p.c_c * (x[2] - x[0]) * (x[2] - x[0]) + 0.5 * p.c_w * x[0] * x[0];
}

}  // namespace nmpc
