#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "vmt/error.hpp"

namespace vmt::train {

/// Linear warmup to `peak` at step `warmup`, then peak * sqrt(warmup / step).
/// Steps count from 1.
inline double lr_schedule(std::uint64_t step, double peak = 1e-3, std::uint64_t warmup = 8000) {
  if (step == 0) throw DataError("lr_schedule: steps count from 1");
  if (warmup == 0) throw DataError("lr_schedule: warmup must be at least one step");
  const double s = static_cast<double>(step), w = static_cast<double>(warmup);
  if (step <= warmup) return peak * s / w;
  return peak * std::sqrt(w / s);
}

}  // namespace vmt::train
