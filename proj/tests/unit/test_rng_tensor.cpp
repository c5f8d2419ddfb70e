// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dfm/rng.hpp"
#include "dfm/tensor.hpp"
#include "dfm/types.hpp"

namespace dfm {
namespace {

TEST(CounterRng, PureFunctionOfCoordinates) {
  const CounterRng a(42), b(42), c(43);
  EXPECT_EQ(a.bits(CounterRng::kPosterior, 3, 7), b.bits(CounterRng::kPosterior, 3, 7));
  EXPECT_NE(a.bits(CounterRng::kPosterior, 3, 7), c.bits(CounterRng::kPosterior, 3, 7));
  EXPECT_NE(a.bits(CounterRng::kPosterior, 3, 7), a.bits(CounterRng::kJumpTest, 3, 7));
  EXPECT_NE(a.bits(CounterRng::kPosterior, 3, 7), a.bits(CounterRng::kPosterior, 4, 7));
  EXPECT_NE(a.bits(CounterRng::kPosterior, 3, 7), a.bits(CounterRng::kPosterior, 3, 8));
}

TEST(CounterRng, UniformIsRoughlyUniform) {
  const CounterRng r(5);
  double mean = 0.0;
  for (std::uint64_t i = 0; i < 100000; ++i) {
    const double u = r.uniform(CounterRng::kInit, 0, i);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    mean += u / 100000.0;
  }
  EXPECT_NEAR(mean, 0.5, 0.005);
}

TEST(DeriveSeed, NamedStreamsDiffer) {
  EXPECT_NE(derive_seed(1, "corpus"), derive_seed(1, "train"));
  EXPECT_NE(derive_seed(1, "corpus"), derive_seed(2, "corpus"));
  EXPECT_EQ(derive_seed(9, "sample"), derive_seed(9, "sample"));
}

TEST(SampleCategorical, InverseCdf) {
  const std::vector<double> w{0.0, 1.0, 0.0, 3.0};
  EXPECT_EQ(sample_categorical(w, 0.0), 1u);
  EXPECT_EQ(sample_categorical(w, 0.2499), 1u);
  EXPECT_EQ(sample_categorical(w, 0.25), 3u);
  EXPECT_EQ(sample_categorical(w, 0.9999999999), 3u);
  // Rounding overrun falls back to the last positive weight.
  EXPECT_EQ(sample_categorical(w, 1.0), 3u);
}

TEST(StandardNormal, Moments) {
  std::mt19937_64 g(8);
  double m = 0.0, v = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = standard_normal(g);
    m += x / n;
    v += x * x / n;
  }
  EXPECT_NEAR(m, 0.0, 0.01);
  EXPECT_NEAR(v, 1.0, 0.02);
}

TEST(Tensor, SoftmaxAndLogSumExp) {
  std::vector<double> v{1000.0, 1000.0};
  softmax_inplace(v);
  EXPECT_DOUBLE_EQ(v[0], 0.5);
  std::vector<double> w{0.0, std::log(3.0)};
  EXPECT_NEAR(log_sum_exp(w), std::log(4.0), 1e-15);
}

TEST(Tensor, Cosine) {
  const std::vector<double> a{1, 0}, b{0, 2}, z{0, 0};
  EXPECT_EQ(cosine_similarity(a, b), 0.0);
  EXPECT_EQ(cosine_similarity(a, z), 0.0);
  EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-15);
  EXPECT_NEAR(l2_norm(b), 2.0, 1e-15);
}

TEST(TokenSequence, PromptAndValidate) {
  const std::vector<TokenId> instr{5, 6};
  const auto p = TokenSequence::prompt(instr, 3, 2);
  EXPECT_EQ(p.size(), 5u);
  EXPECT_EQ(p.count(Segment::Instruction), 2u);
  EXPECT_EQ(p.count(Segment::Response), 3u);
  EXPECT_NO_THROW(p.validate(7, 0));
  EXPECT_THROW(p.validate(6, 0), DomainError);
  TokenSequence bad({3}, {Segment::Pad});
  EXPECT_THROW(bad.validate(7, 0), DomainError);
  EXPECT_THROW(TokenSequence({1, 2}, {Segment::Response}), SizeError);
}

}  // namespace
}  // namespace dfm
