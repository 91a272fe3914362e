#pragma once

#include <vector>

#include "nmpc/plant.hpp"

namespace nmpc::testing {

/// Discrete surrogate plant x+ = x + u with stage cost |x + u|^2 + |u|^2,
/// treating the control interval as a unit step.
class LinearTestPlant : public PlantModel {
 public:
  explicit LinearTestPlant(int dim = 1) : dim_(dim) {}

  int state_dim() const override { return dim_; }
  int control_dim() const override { return dim_; }

  PlantStep step(const Vec& x, const Vec& u, const ParamSignal&, double t0, double T,
                 std::span<const double> = {}, std::span<const double> = {}) const override {
    PlantStep out;
    out.x_next = x + u;
    out.stage_cost = out.x_next.squaredNorm() + u.squaredNorm();
    out.nodes = {t0, t0 + T};
    return out;
  }

 private:
  int dim_;
};

}  // namespace nmpc::testing
