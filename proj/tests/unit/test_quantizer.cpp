// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "dfm/quantizer.hpp"
#include "dfm/rng.hpp"

namespace dfm {
namespace {

std::vector<std::size_t> brute_force(const Codebook& cb, std::span<const double> z) {
  std::vector<std::size_t> best(cb.num_books());
  const std::size_t d = cb.sub_dim();
  for (std::size_t m = 0; m < cb.num_books(); ++m) {
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < cb.book_size(m); ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = z[m * d + j] - cb.book(m)(k, j);
        s += diff * diff;
      }
      if (s < bd) {
        bd = s;
        best[m] = k;
      }
    }
  }
  return best;
}

TEST(Quantize, MatchesExhaustiveSearch) {
  const auto cb = Codebook::random(3, 24, 6, 8);
  std::mt19937_64 rng(2);
  std::vector<double> z(6);
  for (int i = 0; i < 2000; ++i) {
    for (double& v : z) v = 1.5 * standard_normal(rng);
    const auto code = quantize(cb, z);
    EXPECT_EQ(code.indices, brute_force(cb, z));
    EXPECT_EQ(code.representative, representative_lookup(cb, code.indices));
  }
}

TEST(Quantize, TiesGoToLowestIndex) {
  Matrix book(3, 1);
  book.data = {1.0, -1.0, 1.0};
  const Codebook cb({book});
  const std::vector<double> z{0.0};
  EXPECT_EQ(quantize(cb, z).indices[0], 0u);
}

TEST(Quantize, RejectsBadShapes) {
  EXPECT_THROW(Codebook::random(3, 4, 5, 1), DomainError);
  const auto cb = Codebook::random(2, 4, 4, 1);
  const std::vector<double> z(3, 0.0);
  EXPECT_THROW(quantize(cb, z), SizeError);
  const std::vector<std::size_t> idx{0, 9};
  EXPECT_THROW(representative_lookup(cb, idx), DomainError);
}

TEST(Quantize, VqLossesAndProjection) {
  QuantizedCode code;
  code.representative = {1.0, 2.0};
  const std::vector<double> z{0.0, 0.0};
  const auto l = vq_losses(z, code);
  EXPECT_DOUBLE_EQ(l.codebook, 5.0);
  EXPECT_DOUBLE_EQ(l.commitment, 5.0);
  Matrix proj(3, 2);
  proj.data = {1, 0, 0, 1, 1, 1};
  EXPECT_EQ(project(code.representative, proj), (std::vector<double>{1.0, 2.0, 3.0}));
}

TEST(FitCodebook, DistortionNonincreasingInBookSize) {
  std::mt19937_64 rng(6);
  Matrix pts(3000, 4);
  for (double& v : pts.data) v = standard_normal(rng);
  const auto c16 = fit_codebook(pts, 2, 16, 1);
  const auto c32 = fit_codebook(pts, 2, 32, 1, &c16);
  const auto c64 = fit_codebook(pts, 2, 64, 1, &c32);
  const double d16 = quantization_distortion(c16, pts);
  const double d32 = quantization_distortion(c32, pts);
  const double d64 = quantization_distortion(c64, pts);
  EXPECT_LE(d32, d16);
  EXPECT_LE(d64, d32);
  EXPECT_LT(d64, 0.9 * d16);
}

TEST(KMeans, RecoversSeparatedClusters) {
  std::mt19937_64 rng(3);
  Matrix pts(400, 2);
  for (std::size_t i = 0; i < 400; ++i) {
    pts(i, 0) = (i % 4 < 2 ? -10.0 : 10.0) + 0.1 * standard_normal(rng);
    pts(i, 1) = (i % 2 == 0 ? -10.0 : 10.0) + 0.1 * standard_normal(rng);
  }
  std::mt19937_64 krng(1);
  const auto r = kmeans(pts, 4, krng);
  EXPECT_LT(r.mse, 0.05);
  EXPECT_EQ(r.assignment.size(), 400u);
  EXPECT_EQ(r.centroids.rows, 4u);
}

TEST(KMeans, WarmStartNeverWorse) {
  std::mt19937_64 rng(9);
  Matrix pts(500, 2);
  for (double& v : pts.data) v = standard_normal(rng);
  std::mt19937_64 a(1), b(2);
  const auto small = kmeans(pts, 5, a);
  const auto big = kmeans(pts, 10, b, 200, &small.centroids);
  EXPECT_LE(big.mse, small.mse);
}

TEST(TokenLayout, FlattensAndDecodes) {
  const TokenLayout layout(10, {4, 3});
  EXPECT_EQ(layout.total(), 7u);
  EXPECT_EQ(layout.token(1, 2), 16u);
  EXPECT_EQ(layout.decode(16), (std::pair<std::size_t, std::size_t>{1, 2}));
  EXPECT_TRUE(layout.contains(10));
  EXPECT_FALSE(layout.contains(17));
  const std::vector<std::size_t> idx{3, 0};
  EXPECT_EQ(layout.tokens(idx), (std::vector<TokenId>{13, 14}));
  EXPECT_THROW(layout.token(0, 4), DomainError);
  EXPECT_THROW(layout.decode(9), DomainError);

  const auto cb = Codebook::random(2, 4, 4, 3);
  const TokenLayout l2(0, {4, 4});
  const auto rows = l2.representative_rows(cb);
  ASSERT_EQ(rows.rows, 8u);
  ASSERT_EQ(rows.cols, 4u);
  EXPECT_EQ(rows(5, 0), 0.0);
  EXPECT_EQ(rows(5, 2), cb.book(1)(1, 0));
  EXPECT_EQ(rows(1, 1), cb.book(0)(1, 1));
  EXPECT_EQ(rows(1, 3), 0.0);
}

}  // namespace
}  // namespace dfm
