// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dfm/cache.hpp"
#include "dfm/sampler.hpp"

namespace dfm {
namespace {

ArchitectureConfig arch() {
  ArchitectureConfig a;
  a.vocab_size = 10;
  a.max_length = 16;
  a.width = 16;
  a.layers = 2;
  a.heads = 2;
  a.mlp_ratio = 2;
  return a;
}

TokenSequence prompt(std::size_t response) {
  const std::vector<TokenId> instr{4, 5};
  return TokenSequence::prompt(instr, response, 2);
}

TEST(Cache, ForcedRecomputeMatchesUncachedForward) {
  const TrainableDenoiser model(arch(), 3);
  CacheConfig forced;
  forced.tau = 2.0;
  auto x = prompt(8);
  CacheState cache;
  EXPECT_EQ(initialize_cache(model, x, 0.0, false, cache).logits, model.forward(x, 0.0, false).logits);
  for (int step = 1; step < 10; ++step) {
    x.tokens[2 + step % 8] = static_cast<TokenId>(step % 10);
    const double t = step / 10.0;
    EXPECT_EQ(cached_forward(model, x, t, false, cache, forced).logits, model.forward(x, t, false).logits);
  }
  EXPECT_EQ(cache.counters.reused, 0u);
  EXPECT_EQ(cache.counters.recomputed, 10u * 8u);
}

TEST(Cache, UnchangedInputIsReusedExactly) {
  const TrainableDenoiser model(arch(), 3);
  CacheConfig cfg;
  cfg.refresh_interval = 0;
  const auto x = prompt(6);
  CacheState cache;
  initialize_cache(model, x, 0.3, true, cache);
  const auto before = cache.counters;
  const auto out = cached_forward(model, x, 0.3, true, cache, cfg);
  EXPECT_EQ(out.logits, model.forward(x, 0.3, true).logits);
  EXPECT_EQ(cache.counters.reused - before.reused, 6u);
  EXPECT_EQ(cache.counters.recomputed, before.recomputed);
}

TEST(Cache, PeriodicRefreshRecomputesEverything) {
  const TrainableDenoiser model(arch(), 3);
  CacheConfig cfg;
  cfg.tau = 0.0;
  cfg.refresh_interval = 4;
  const auto x = prompt(6);
  CacheState cache;
  initialize_cache(model, x, 0.0, false, cache);
  std::vector<std::uint64_t> recomputed;
  for (int c = 0; c < 8; ++c) {
    const auto r0 = cache.counters.recomputed;
    cached_forward(model, x, 0.1 * c, false, cache, cfg);
    recomputed.push_back(cache.counters.recomputed - r0);
  }
  // cache.calls counts initialization as call 0.
  for (int c = 0; c < 8; ++c) EXPECT_EQ(recomputed[c], (c + 1) % 4 == 0 ? 6u : 0u) << c;
}

TEST(Cache, RecomputeGrowsWithThresholdOnAReplayedTrajectory) {
  const TrainableDenoiser model(arch(), 7);
  SamplerConfig sc;
  sc.steps = 24;
  const auto schedule = PathSchedule::mixture(10);
  TrainableDenoiser copy = model;
  const auto traj = generate(copy, prompt(12), sc, schedule, 5).trace;
  double previous = -1.0;
  for (double tau : {0.0, 0.5, 0.9, 0.99, 2.0}) {
    CacheConfig cfg;
    cfg.tau = tau;
    cfg.refresh_interval = 0;
    CacheState cache;
    initialize_cache(model, traj.steps[0].sequence, 0.0, false, cache);
    cache.counters = {};
    for (std::size_t s = 1; s < traj.steps.size(); ++s) {
      cached_forward(model, traj.steps[s].sequence, traj.steps[s].t, false, cache, cfg);
    }
    const double f = cache.counters.recompute_fraction();
    EXPECT_GE(f, previous) << "tau " << tau;
    previous = f;
  }
  EXPECT_EQ(previous, 1.0);
}

TEST(Cache, CachedDenoiserForcedIsBitIdenticalOverGeneration) {
  const TrainableDenoiser model(arch(), 11);
  CacheConfig forced;
  forced.tau = 2.0;
  CachedDenoiser cached(model, forced);
  TrainableDenoiser plain = model;
  SamplerConfig sc;
  sc.steps = 16;
  sc.guidance_scale = 1.5;
  const auto schedule = PathSchedule::mixture(10);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto a = generate(plain, prompt(10), sc, schedule, seed);
    const auto b = generate(cached, prompt(10), sc, schedule, seed);
    EXPECT_EQ(a.sequence, b.sequence);
    for (std::size_t s = 0; s < a.trace.steps.size(); ++s) {
      EXPECT_EQ(a.trace.steps[s].sequence, b.trace.steps[s].sequence);
    }
  }
  EXPECT_EQ(cached.cache_counters().reused, 0u);
}

TEST(Cache, AuditAndLayoutRebuild) {
  const TrainableDenoiser model(arch(), 3);
  CacheConfig cfg;
  cfg.audit = true;
  cfg.refresh_interval = 0;
  CachedDenoiser d(model, cfg);
  d.begin_generation();
  d.predict(prompt(4), 0.0, false);
  d.predict(prompt(4), 0.1, false);
  EXPECT_EQ(d.audit_log().size(), 4u);
  d.predict(prompt(6), 0.2, false);  // new layout: full rebuild
  EXPECT_EQ(d.state(false).slots(), 2u + 6u + 1u);
  EXPECT_EQ(d.audit_log().size(), 4u);
  EXPECT_FALSE(d.state(true).initialized);
}

TEST(Cache, Errors) {
  const TrainableDenoiser model(arch(), 3);
  CacheState cache;
  EXPECT_THROW(cached_forward(model, prompt(4), 0.1, false, cache, {}), PreconditionError);
  initialize_cache(model, prompt(4), 0.0, false, cache);
  EXPECT_THROW(cached_forward(model, prompt(5), 0.1, false, cache, {}), PreconditionError);
  CacheConfig bad;
  bad.similarity_layer = 1;
  EXPECT_THROW(cached_forward(model, prompt(4), 0.1, false, cache, bad), ConfigError);
  EXPECT_THROW(nlohmann::json({{"tau", -1.0}}).get<CacheConfig>(), ConfigError);
}

TEST(Cache, ConfigJson) {
  CacheConfig c;
  c.tau = 0.9;
  c.refresh_interval = 3;
  c.audit = true;
  EXPECT_EQ(nlohmann::json(c).get<CacheConfig>(), c);
}

TEST(SpeedupReport, RatioAndGridCheck) {
  GenerationTrace u, c;
  u.steps = {{0, 0.0, 0, 4.0, {}, {}}, {1, 0.5, 0, 4.0, {}, {}}};
  c.steps = {{0, 0.0, 0, 2.0, {3, 1}, {}}, {1, 0.5, 0, 2.0, {1, 3}, {}}};
  const auto r = speedup_report(u, c, 0.01);
  EXPECT_DOUBLE_EQ(r.ratio, 2.0);
  EXPECT_DOUBLE_EQ(r.recompute_fraction, 0.5);
  EXPECT_EQ(r.per_step_recompute_fraction, (std::vector<double>{0.75, 0.25}));
  EXPECT_EQ(r.reference_ratio, 1.2);
  EXPECT_EQ(nlohmann::json(r).at("tv_drift").get<double>(), 0.01);
  c.steps[1].t = 0.4;
  EXPECT_THROW(speedup_report(u, c), ComparisonError);
  c.steps.pop_back();
  EXPECT_THROW(speedup_report(u, c), ComparisonError);
}

}  // namespace
}  // namespace dfm
