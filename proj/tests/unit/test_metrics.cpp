// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "dfm/metrics.hpp"

namespace dfm {
namespace {

TEST(Tv, KnownValues) {
  const std::vector<double> p{0.5, 0.5, 0.0}, q{0.0, 0.5, 0.5};
  EXPECT_DOUBLE_EQ(tv_distance(p, q), 0.5);
  EXPECT_EQ(tv_distance(p, p), 0.0);
  EXPECT_THROW(tv_distance(p, std::vector<double>{1.0}), SizeError);
}

TEST(Kl, FiniteAndInfinite) {
  const std::vector<double> p{0.5, 0.5}, q{0.25, 0.75}, z{1.0, 0.0};
  EXPECT_NEAR(kl_divergence(p, q).value, 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0), 1e-15);
  EXPECT_FALSE(kl_divergence(p, q).infinite);
  const auto inf = kl_divergence(p, z);
  EXPECT_TRUE(inf.infinite);
  EXPECT_EQ(inf.value, std::numeric_limits<double>::infinity());
  EXPECT_EQ(kl_divergence(z, p).value, std::log(2.0));
}

TEST(TvToTarget, CountsOffSupportMass) {
  SequenceDistribution q;
  q.add({1, 2}, 0.5);
  q.add({2, 1}, 0.5);
  const std::vector<std::vector<TokenId>> s{{1, 2}, {1, 2}, {2, 1}, {0, 0}};
  EXPECT_DOUBLE_EQ(tv_to_target(q, s), 0.25);
  const auto e = empirical_on_support(q, s);
  EXPECT_EQ(e, (std::vector<double>{0.5, 0.25, 0.25}));
}

TEST(TvBetweenSamples, DisjointAndEqual) {
  const std::vector<std::vector<TokenId>> a{{1}, {2}}, b{{3}, {3}}, c{{2}, {1}};
  EXPECT_DOUBLE_EQ(tv_between_samples(a, b), 1.0);
  EXPECT_DOUBLE_EQ(tv_between_samples(a, c), 0.0);
}

TEST(RandomReciprocalRank, MatchesExactRationals) {
  EXPECT_NEAR(random_reciprocal_rank(100, 1), 0.0518737751763962, 1e-15);
  EXPECT_NEAR(random_reciprocal_rank(100, 13), 0.30788828309745736, 1e-14);
  EXPECT_NEAR(random_reciprocal_rank(10, 3), 0.5358630952380953, 1e-15);
  EXPECT_DOUBLE_EQ(random_reciprocal_rank(5, 5), 1.0);
  EXPECT_THROW(random_reciprocal_rank(3, 4), DomainError);
}

TEST(Mrr, PerfectAndPessimisticTies) {
  Matrix q(2, 2), c(2, 2);
  q.data = {1, 0, 0, 1};
  c.data = {1, 0, 0, 1};
  const std::vector<std::size_t> l{0, 1};
  EXPECT_DOUBLE_EQ(mean_reciprocal_rank(q, c, l, l), 1.0);
  const std::vector<std::size_t> swapped{1, 0};
  EXPECT_DOUBLE_EQ(mean_reciprocal_rank(q, c, l, swapped), 0.5);
  Matrix same(2, 2, 1.0);
  EXPECT_DOUBLE_EQ(mean_reciprocal_rank(q, same, l, l), 0.5);
  EXPECT_THROW(mean_reciprocal_rank(q, c, l, std::vector<std::size_t>{0}), SizeError);
}

TEST(Mrr, RandomBaselineAveragesPerQuery) {
  const std::vector<std::size_t> ql{0, 1}, cl{0, 0, 1, 1, 1};
  const double expected = 0.5 * (random_reciprocal_rank(5, 2) + random_reciprocal_rank(5, 3));
  EXPECT_NEAR(random_mrr_baseline(ql, cl), expected, 1e-15);
}

}  // namespace
}  // namespace dfm
