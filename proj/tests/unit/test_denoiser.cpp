// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "dfm/denoiser.hpp"

namespace dfm {
namespace {

PathSchedule line3() { return PathSchedule::metric({0, 1, 2, 1, 0, 1, 2, 1, 0}, 3); }

SequenceDistribution two_point() {
  SequenceDistribution q;
  q.add({0, 1}, 0.3);
  q.add({2, 0}, 0.7);
  return q;
}

TEST(OraclePosterior, MatchesEnumeratedBayes) {
  const auto out = oracle_posterior(two_point(), line3(), TokenSequence::response_only({1, 1}), 0.5);
  const auto p0 = out.probabilities(0);
  const auto p1 = out.probabilities(1);
  EXPECT_NEAR(p0[0], 0.8917483096522472, 1e-13);
  EXPECT_NEAR(p0[1], 0.0, 1e-15);
  EXPECT_NEAR(p0[2], 0.1082516903477528, 1e-13);
  EXPECT_NEAR(p1[0], 0.1082516903477528, 1e-13);
  EXPECT_NEAR(p1[1], 0.8917483096522472, 1e-13);
  EXPECT_FALSE(out.zero_likelihood);
}

TEST(OraclePosterior, DeltaTargetIsCertain) {
  const auto q = SequenceDistribution::delta({2, 0, 1});
  const auto out = oracle_posterior(q, line3(), TokenSequence::response_only({0, 0, 0}), 0.3);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out.probabilities(i)[q.support[0][i]], 1.0, 1e-15);
}

TEST(OraclePosterior, ZeroLikelihoodYieldsUniformRows) {
  // A masked mixture at t = 0 puts all mass on the mask, so an unmasked token
  // is impossible.
  const auto s = PathSchedule::masked(4, 3);
  const auto out = oracle_posterior(SequenceDistribution::delta({0, 1}), s,
                                    TokenSequence::response_only({2, 3}), 0.0);
  EXPECT_TRUE(out.zero_likelihood);
  for (double p : out.probabilities(0)) EXPECT_NEAR(p, 0.25, 1e-15);
}

TEST(OraclePosterior, DroppedConditionIgnoresInstruction) {
  SequenceDistribution q;
  q.add({0, 0}, 0.5);
  q.add({2, 2}, 0.5);
  TokenSequence x({0, 1}, {Segment::Instruction, Segment::Response});
  const auto cond = oracle_posterior(q, line3(), x, 0.9);
  const auto uncond = oracle_posterior(q, line3(), x, 0.9, true);
  EXPECT_GT(cond.probabilities(1)[0], 0.99);
  EXPECT_NEAR(uncond.probabilities(1)[0], 0.5, 1e-12);
}

TEST(OraclePosterior, EnforcesCapsAndShapes) {
  EXPECT_THROW(oracle_posterior(two_point(), line3(), TokenSequence::response_only({1}), 0.5), SizeError);
  EXPECT_THROW(oracle_posterior(two_point(), line3(), TokenSequence::response_only({1, 1}), 0.5, false, 1),
               SizeError);
}

TEST(OracleDenoiser, AdaptsTheFunction) {
  OracleDenoiser d(two_point(), line3());
  EXPECT_EQ(d.vocab_size(), 3u);
  const auto x = TokenSequence::response_only({1, 1});
  EXPECT_EQ(d.predict(x, 0.5, false).logits, oracle_posterior(two_point(), line3(), x, 0.5).logits);
  EXPECT_EQ(d.cache_counters(), CacheCounters{});
}

}  // namespace
}  // namespace dfm
