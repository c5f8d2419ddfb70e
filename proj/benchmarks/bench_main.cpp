// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include <benchmark/benchmark.h>

#include "dfm/cache.hpp"
#include "dfm/quantizer.hpp"
#include "dfm/rng.hpp"
#include "dfm/sampler.hpp"
#include "dfm/training.hpp"

namespace {

using namespace dfm;

ArchitectureConfig arch(std::size_t length) {
  ArchitectureConfig a;
  a.vocab_size = 16;
  a.max_length = length + 1;
  a.width = 64;
  a.layers = 2;
  a.heads = 4;
  return a;
}

TokenSequence prompt(std::size_t response) {
  const std::vector<TokenId> instr{3};
  return TokenSequence::prompt(instr, response, 2);
}

void BM_Forward(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const TrainableDenoiser model(arch(d), 1);
  const auto x = prompt(d);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, 0.5, false));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d));
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const TrainableDenoiser model(arch(d), 1);
  auto x1 = prompt(d);
  for (std::size_t i = 1; i < x1.size(); ++i) x1.tokens[i] = static_cast<TokenId>(2 + i % 14);
  const auto xt = prompt(d);
  auto grads = model.weights().zeros_like();
  for (auto _ : state) {
    ForwardRecord rec;
    const auto out = model.forward(xt, 0.5, false, &rec);
    const auto g = dfm_ce_loss_with_grad(out.logits, x1).second;
    model.backward(rec, g, grads);
    benchmark::DoNotOptimize(grads);
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_CachedForward(benchmark::State& state) {
  const std::size_t d = 256;
  const TrainableDenoiser model(arch(d), 1);
  CacheConfig cfg;
  cfg.tau = static_cast<double>(state.range(0)) / 100.0;
  cfg.refresh_interval = 0;
  auto x = prompt(d);
  CacheState cache;
  initialize_cache(model, x, 0.0, false, cache);
  std::size_t step = 0;
  for (auto _ : state) {
    // Change one token in eight, roughly what a mid-trajectory step does.
    for (std::size_t i = 1 + step % 8; i < x.size(); i += 8) x.tokens[i] = static_cast<TokenId>((x.tokens[i] + 1) % 16);
    benchmark::DoNotOptimize(cached_forward(model, x, 0.5, false, cache, cfg));
    ++step;
  }
  state.counters["recompute_fraction"] = cache.counters.recompute_fraction();
}
BENCHMARK(BM_CachedForward)->Arg(90)->Arg(95)->Arg(99)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_Quantize(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const auto cb = Codebook::random(4, k, 16, 1);
  std::mt19937_64 rng(2);
  std::vector<double> z(16);
  for (double& v : z) v = standard_normal(rng);
  for (auto _ : state) benchmark::DoNotOptimize(quantize(cb, z));
}
BENCHMARK(BM_Quantize)->Arg(16)->Arg(64)->Arg(256);

void BM_EulerStep(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto schedule = PathSchedule::metric(Vocabulary::random(16, 16, 7, {}));
  std::mt19937_64 rng(3);
  DenoiserOutput out;
  out.logits = Matrix(d, 16);
  for (double& v : out.logits.data) v = standard_normal(rng);
  auto x = TokenSequence::response_only(std::vector<TokenId>(d, 5));
  const CounterRng crng(4);
  std::uint64_t step = 0;
  for (auto _ : state) benchmark::DoNotOptimize(euler_step(x, 0.5, 1.0 / 64, out, schedule, crng, step++));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d));
}
BENCHMARK(BM_EulerStep)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
