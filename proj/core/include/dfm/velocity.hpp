// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "dfm/schedule.hpp"

namespace dfm {

/// Total jump rate out of the current token and where a jump lands.
struct JumpLaw {
  double total_rate = 0.0;
  /// Zero at the current token; sums to 1 when total_rate > 0, all zero otherwise.
  std::vector<double> target_distribution;
};

/// Kinetic-optimal rate for moving probability from `z` to `x` given target `x1`:
///   p_t(x | x1) * beta'(t) * max(d(z, x1) - d(x, x1), 0).
/// Mass only flows toward tokens strictly closer to x1. Metric schedules only.
double kop_rate(const PathSchedule& schedule, TokenId x, TokenId z, TokenId x1, double t);

/// lambda = sum_{x != current} kop_rate(x, current, x1, t) and the normalized
/// rates as the jump target.
JumpLaw jump_law(const PathSchedule& schedule, TokenId current, TokenId x1, double t);

}  // namespace dfm
