#pragma once

#include <gnerf/core/types.hpp>

#include <numbers>

namespace gnerf::train {

/// Rival-to-expert temperature: cosine annealing from tau_max to tau_min over the first
/// `anneal_fraction` of training, then constant tau_min.
struct TemperatureSchedule {
  double tau_max = 10.0;
  double tau_min = 0.5;
  double anneal_fraction = 0.2;  // T_max, as a fraction of all iterations

  void validate() const {
    require(tau_min > 0 && tau_max >= tau_min, "temperature schedule: need tau_max >= tau_min > 0");
    require(anneal_fraction >= 0 && anneal_fraction <= 1, "temperature schedule: T_max must lie in [0, 1]");
  }

  static TemperatureSchedule constant(double tau) { return {tau, tau, 0.0}; }
};

/// tau(t) for t in [0, 1] (fraction of training completed).
inline double temperature_at(double t, const TemperatureSchedule& s) {
  s.validate();
  require(t >= 0 && t <= 1, "temperature_at: t must lie in [0, 1]");
  if (s.anneal_fraction == 0.0 || t > s.anneal_fraction) return s.tau_min;
  return s.tau_min + (s.tau_max - s.tau_min) / 2.0 * (1.0 + std::cos(std::numbers::pi * t / s.anneal_fraction));
}

}  // namespace gnerf::train
