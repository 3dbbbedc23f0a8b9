#pragma once

#include <gnerf/core/types.hpp>

#include <cmath>
#include <cstdint>

namespace gnerf::nn {

/// lr(step) = initial * decay^(step / total_steps), or `initial` when constant.
struct ExponentialDecay {
  double initial = 1.3e-3;
  double decay = 0.1;
  std::int64_t total_steps = 1;
  bool constant = false;
};

inline double lr_at(std::int64_t step, const ExponentialDecay& s) {
  require(step >= 0, "lr_at: step must be >= 0");
  if (s.constant || s.total_steps <= 0) return s.initial;
  return s.initial * std::pow(s.decay, static_cast<double>(step) / static_cast<double>(s.total_steps));
}

}  // namespace gnerf::nn
