// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace dfm {

/// Uniform double in [0, 1) from the top 53 bits of one 64-bit draw.
inline double uniform01(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

double standard_normal(std::mt19937_64& gen);

/// Inverse-CDF draw from unnormalized nonnegative weights given u in [0,1).
/// Falls back to the last index with positive weight on rounding overrun.
std::size_t sample_categorical(std::span<const double> weights, double u);

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stateless counter-based generator: every draw is a pure function of
/// (seed, stream, step, index, lane). Lets per-coordinate updates run in any
/// order and still reproduce bit-for-bit.
class CounterRng {
 public:
  enum Stream : std::uint64_t {
    kInit = 1,
    kPosterior = 2,
    kJumpTest = 3,
    kJumpTarget = 4,
    kFallbackOrder = 5,
    kExtension = 6,
  };

  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t bits(std::uint64_t stream, std::uint64_t step, std::uint64_t index) const {
    std::uint64_t h = mix64(seed_ ^ mix64(stream));
    h = mix64(h ^ mix64(step + 0x632be59bd9b4e019ULL));
    return mix64(h ^ mix64(index + 0x8cb92ba72f3d8dd7ULL));
  }

  double uniform(std::uint64_t stream, std::uint64_t step, std::uint64_t index) const {
    return static_cast<double>(bits(stream, step, index) >> 11) * 0x1.0p-53;
  }

 private:
  std::uint64_t seed_;
};

/// Named sub-stream derived from a root seed (corpus/init/train/sample...).
std::uint64_t derive_seed(std::uint64_t root, std::string_view name);

}  // namespace dfm
