// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dfm/schedule.hpp"
#include "dfm/tensor.hpp"
#include "dfm/types.hpp"

namespace dfm {

/// 1/2 sum |p - q| over a shared support enumeration.
double tv_distance(std::span<const double> p, std::span<const double> q);

struct KlResult {
  double value = 0.0;
  /// Set when some q(x) = 0 < p(x); `value` is then +inf.
  bool infinite = false;
};

/// sum p log(p / q) with the absolute-continuity check.
KlResult kl_divergence(std::span<const double> p, std::span<const double> q);

/// TV between the empirical law of `samples` and q. Samples outside the
/// support of q count fully toward the distance.
double tv_to_target(const SequenceDistribution& q, const std::vector<std::vector<TokenId>>& samples);

/// Empirical law over the support of q plus one trailing "other" bucket.
std::vector<double> empirical_on_support(const SequenceDistribution& q,
                                         const std::vector<std::vector<TokenId>>& samples);

/// TV between the empirical laws of two sample sets.
double tv_between_samples(const std::vector<std::vector<TokenId>>& a,
                          const std::vector<std::vector<TokenId>>& b);

/// Mean reciprocal rank of the first relevant candidate, where candidate j
/// is relevant to query i iff their labels agree. Candidates are ranked by
/// cosine similarity; ties with irrelevant items are broken pessimistically.
double mean_reciprocal_rank(const Matrix& queries, const Matrix& candidates,
                            std::span<const std::size_t> query_labels,
                            std::span<const std::size_t> candidate_labels);

/// Expected reciprocal rank of the first of `relevant` items in a uniformly
/// random ordering of n candidates. relevant = 1 gives H_n / n.
double random_reciprocal_rank(std::size_t n, std::size_t relevant);

/// Expected MRR of a random ranker for the given labels.
double random_mrr_baseline(std::span<const std::size_t> query_labels,
                           std::span<const std::size_t> candidate_labels);

}  // namespace dfm
