#pragma once

#include <cmath>

#include "contifuse/common.hpp"

namespace contifuse {

/// Warmup-cosine learning rate.  Linear ramp lr_start -> lr_peak over the
/// first warmup_steps steps (step counts from 0, so lr(warmup_steps) is the
/// peak), then half-cosine lr_peak -> lr_final ending exactly at the last
/// step (total_steps - 1).  Both branches meet at lr_peak, so the schedule
/// is continuous.
inline double lr_at(Dim step, Dim warmup_steps, Dim total_steps, double lr_start, double lr_peak,
                    double lr_final) {
  require(total_steps >= 1, "lr_at: need at least one step");
  require(warmup_steps >= 0 && warmup_steps < total_steps, "lr_at: warmup must precede the end");
  require(step >= 0, "lr_at: negative step");
  if (step >= total_steps) return lr_final;
  if (step <= warmup_steps) {
    if (warmup_steps == 0) return lr_peak;
    return lr_start + (lr_peak - lr_start) * double(step) / double(warmup_steps);
  }
  const Dim span = (total_steps - 1) - warmup_steps;
  if (span <= 0) return lr_final;
  const double t = double(step - warmup_steps) / double(span);
  return lr_final + (lr_peak - lr_final) * 0.5 * (1.0 + std::cos(t * 3.14159265358979323846));
}

}  // namespace contifuse
