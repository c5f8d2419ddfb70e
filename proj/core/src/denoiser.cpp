// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dfm/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dfm {

void softmax_inplace(std::span<double> v) {
  if (v.empty()) return;
  double mx = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    z += x;
  }
  for (double& x : v) x /= z;
}

double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double z = 0.0;
  for (double x : v) z += std::exp(x - mx);
  return mx + std::log(z);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double na = l2_norm(a);
  double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

std::vector<double> DenoiserOutput::probabilities(std::size_t position) const {
  auto r = logits.row(position);
  std::vector<double> p(r.begin(), r.end());
  softmax_inplace(p);
  return p;
}

DenoiserOutput oracle_posterior(const SequenceDistribution& q, const PathSchedule& schedule,
                                const TokenSequence& x_t, double t, bool condition_dropped,
                                std::size_t support_cap) {
  if (q.support.size() > support_cap) throw SizeError("oracle support exceeds cap");
  if (x_t.size() != q.length) throw SizeError("x_t length differs from target length");
  const std::size_t d = x_t.size();
  const std::size_t k = schedule.vocab_size();
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  // log q(x1) + sum_j log p_t(x_t^j | x1^j) per support element.
  std::vector<double> log_weight(q.support.size(), kNegInf);
  for (std::size_t s = 0; s < q.support.size(); ++s) {
    if (q.probs[s] <= 0.0) continue;
    double lw = std::log(q.probs[s]);
    const auto& x1 = q.support[s];
    for (std::size_t j = 0; j < d && std::isfinite(lw); ++j) {
      if (condition_dropped && x_t.segments[j] == Segment::Instruction) continue;
      lw += log_conditional_prob(schedule, x_t.tokens[j], x1[j], t);
    }
    log_weight[s] = lw;
  }

  DenoiserOutput out;
  out.logits = Matrix(d, k, kNegInf);
  double total = log_sum_exp(log_weight);
  if (!std::isfinite(total)) {
    out.logits.fill(0.0);
    out.zero_likelihood = true;
    return out;
  }
  for (std::size_t i = 0; i < d; ++i) {
    auto row = out.logits.row(i);
    // Accumulate per-token log mass with pairwise log-add.
    for (std::size_t s = 0; s < q.support.size(); ++s) {
      double lw = log_weight[s];
      if (!std::isfinite(lw)) continue;
      double& cell = row[q.support[s][i]];
      if (!std::isfinite(cell)) {
        cell = lw;
      } else {
        double hi = std::max(cell, lw);
        double lo = std::min(cell, lw);
        cell = hi + std::log1p(std::exp(lo - hi));
      }
    }
    // Finite floor keeps guidance arithmetic (differences of logits) NaN-free.
    for (double& v : row) v = std::isfinite(v) ? v - total : -1e30;
  }
  return out;
}

}  // namespace dfm
