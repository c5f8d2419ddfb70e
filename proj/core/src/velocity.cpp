// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dfm/velocity.hpp"

#include <algorithm>

namespace dfm {
namespace {

void require_metric(const PathSchedule& schedule) {
  if (schedule.kind() != PathKind::Metric) {
    throw UnsupportedScheduleError(
        "kinetic-optimal velocity is defined for metric schedules only; mixture schedules use the "
        "posterior-resampling sampler");
  }
}

}  // namespace

double kop_rate(const PathSchedule& schedule, TokenId x, TokenId z, TokenId x1, double t) {
  require_metric(schedule);
  if (z >= schedule.vocab_size()) throw DomainError("token outside schedule vocabulary");
  double gap = schedule.distance(z, x1) - schedule.distance(x, x1);
  if (gap <= 0.0) return 0.0;
  return conditional_prob(schedule, x, x1, t) * beta_rate(schedule, t) * gap;
}

JumpLaw jump_law(const PathSchedule& schedule, TokenId current, TokenId x1, double t) {
  require_metric(schedule);
  const std::size_t k = schedule.vocab_size();
  if (current >= k) throw DomainError("token outside schedule vocabulary");
  JumpLaw law;
  law.target_distribution.assign(k, 0.0);
  if (current == x1) return law;

  auto pt = conditional_distribution(schedule, x1, t);
  auto d = schedule.distances_from(x1);
  const double rate = beta_rate(schedule, t);
  const double dz = d[current];
  for (std::size_t x = 0; x < k; ++x) {
    if (x == current) continue;
    double gap = dz - d[x];
    if (gap <= 0.0) continue;
    double r = pt[x] * rate * gap;
    law.target_distribution[x] = r;
    law.total_rate += r;
  }
  if (law.total_rate > 0.0) {
    for (double& v : law.target_distribution) v /= law.total_rate;
  }
  return law;
}

}  // namespace dfm
