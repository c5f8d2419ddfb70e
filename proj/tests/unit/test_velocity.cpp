// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "dfm/schedule.hpp"
#include "dfm/velocity.hpp"

namespace dfm {
namespace {

PathSchedule line3() { return PathSchedule::metric({0, 1, 2, 1, 0, 1, 2, 1, 0}, 3); }

TEST(KopRate, MatchesHighPrecisionValues) {
  const auto s = line3();
  // Leaving token 2 toward target 0 at t = 0.5.
  EXPECT_NEAR(kop_rate(s, 1, 2, 0, 0.5), 0.510992876395699595, 1e-12);
  EXPECT_NEAR(kop_rate(s, 0, 2, 0, 0.5), 20.5271325726633925, 1e-10);
}

TEST(KopRate, ZeroTowardTokensThatAreNotCloser) {
  const auto s = line3();
  EXPECT_EQ(kop_rate(s, 2, 1, 0, 0.5), 0.0);
  EXPECT_EQ(kop_rate(s, 1, 1, 0, 0.5), 0.0);
  EXPECT_EQ(kop_rate(s, 2, 0, 0, 0.5), 0.0);
}

TEST(JumpLaw, TotalRateAndTarget) {
  const auto law = jump_law(line3(), 2, 0, 0.5);
  EXPECT_NEAR(law.total_rate, 21.0381254490590921, 1e-10);
  EXPECT_NEAR(law.target_distribution[0], 0.975711102320736793, 1e-12);
  EXPECT_NEAR(law.target_distribution[1], 0.0242888976792632069, 1e-12);
  EXPECT_EQ(law.target_distribution[2], 0.0);
}

TEST(JumpLaw, NoMovementAtTarget) {
  const auto law = jump_law(line3(), 0, 0, 0.5);
  EXPECT_EQ(law.total_rate, 0.0);
  for (double p : law.target_distribution) EXPECT_EQ(p, 0.0);
}

TEST(JumpLaw, MixtureIsUnsupported) {
  EXPECT_THROW(jump_law(PathSchedule::mixture(3), 1, 0, 0.5), UnsupportedScheduleError);
  EXPECT_THROW(kop_rate(PathSchedule::mixture(3), 1, 2, 0, 0.5), UnsupportedScheduleError);
}

TEST(KopRate, PropertySuiteOnRandomVocabularies) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto vocab = Vocabulary::random(9, 6, seed, {});
    const auto s = PathSchedule::metric(vocab, 3.0, 0.9);
    for (int i = 1; i < 20; ++i) {
      const double t = i / 20.0;
      for (TokenId x1 = 0; x1 < 9; ++x1) {
        for (TokenId z = 0; z < 9; ++z) {
          const auto law = jump_law(s, z, x1, t);
          double sum = 0.0;
          for (TokenId x = 0; x < 9; ++x) {
            if (x == z) continue;
            const double r = kop_rate(s, x, z, x1, t);
            ASSERT_GE(r, 0.0);
            if (s.distance(x, x1) >= s.distance(z, x1)) {
              ASSERT_EQ(r, 0.0);
            }
            sum += r;
          }
          EXPECT_NEAR(law.total_rate, sum, 1e-9 * (1.0 + sum));
        }
      }
    }
  }
}

TEST(BetaRate, MatchesCentralDifferences) {
  const auto s = line3();
  for (int i = 5; i <= 95; ++i) {
    const double t = i / 100.0;
    const double h = 1e-6;
    const double fd = (beta_at(s, t + h).value - beta_at(s, t - h).value) / (2.0 * h);
    EXPECT_NEAR(fd / beta_rate(s, t), 1.0, 1e-5) << "t=" << t;
  }
}

}  // namespace
}  // namespace dfm
