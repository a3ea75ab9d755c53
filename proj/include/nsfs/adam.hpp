#pragma once

#include "nsfs/types.hpp"

namespace nsfs {

struct AdamState {
  std::int64_t step_count = 0;
  Vector first_moment;
  Vector second_moment;
  double step_size = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_weights(Index n, double step_size = 1e-4);
};

/// One bias-corrected Adam update of `weights` (descent direction).
/// Throws NumericError naming the first non-finite gradient entry.
void adam_step(AdamState& state, Vector& weights, const Vector& gradient);

}  // namespace nsfs
