#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "msfa/config.hpp"

namespace msfa {

/// Index of the step at which the rate peaks. Kept inside [1, total-2] so the
/// first and last steps sit exactly at lr_min.
inline int warmup_steps(int total_steps, Real warmup_fraction) {
  if (total_steps < 3) return 0;
  const int w = static_cast<int>(std::lround(warmup_fraction * total_steps));
  return std::clamp(w, 1, total_steps - 2);
}

/// Linear ramp lr_min -> lr_max over the warm-up, then linear decay back to
/// lr_min at step total_steps-1.
inline Real lr_at(int step, int total_steps, Real lr_min, Real lr_max, Real warmup_fraction) {
  if (total_steps <= 0) throw ConfigError("total_steps must be positive, got " + std::to_string(total_steps));
  if (step < 0 || step >= total_steps)
    throw ConfigError("step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + ")");
  const int w = warmup_steps(total_steps, warmup_fraction);
  if (w == 0) return lr_min;
  const int last = total_steps - 1;
  if (step <= w) return std::lerp(lr_min, lr_max, static_cast<Real>(step) / w);
  return std::lerp(lr_max, lr_min, static_cast<Real>(step - w) / (last - w));
}

inline Real lr_at(int step, int total_steps, const TrainConfig& cfg) {
  return lr_at(step, total_steps, cfg.lr_min, cfg.lr_max, cfg.warmup_fraction);
}

}  // namespace msfa
