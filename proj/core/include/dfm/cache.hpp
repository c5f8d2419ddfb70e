// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dfm/denoiser.hpp"
#include "dfm/sampler.hpp"
#include "dfm/transformer.hpp"

namespace dfm {

struct CacheConfig {
  /// Reuse a response slot when max(cos(v_now, v_cached), 0) >= tau.
  /// tau > 1 forces a full recompute of every slot (bit-identical to the
  /// uncached forward).
  double tau = 0.95;
  /// Layer whose value features gate reuse. Only 0 is supported.
  std::size_t similarity_layer = 0;
  /// Every this many calls the whole stack is recomputed regardless of
  /// similarity; 0 disables. Layer-0 values do not see context changes, so
  /// without this a reused slot keeps its early-time logits indefinitely.
  std::size_t refresh_interval = 8;
  /// Record one audit entry per gated slot and call.
  bool audit = false;

  bool forced_recompute() const { return tau > 1.0; }
  friend bool operator==(const CacheConfig&, const CacheConfig&) = default;
};

void to_json(nlohmann::json& j, const CacheConfig& c);
void from_json(const nlohmann::json& j, CacheConfig& c);

struct CacheAuditEntry {
  std::uint64_t call = 0;
  std::size_t slot = 0;
  /// Token in the slot differs from the one present at its last refresh.
  bool token_changed = false;
  double similarity = 0.0;
  bool reused = false;
};

/// Per-session features for one condition flag.
///
/// Slot 0 is the begin-of-sequence state and slot i + 1 holds token i. The
/// prefix span (slot 0 plus every Instruction position) is frozen after
/// initialization.
struct CacheState {
  bool initialized = false;
  std::vector<Segment> layout;
  std::vector<TokenId> slot_tokens;   // token at last refresh
  std::vector<Matrix> keys, values;   // per layer, slots x H
  Matrix logits;                      // positions x K
  std::vector<std::uint64_t> last_refresh;
  std::uint64_t calls = 0;
  CacheCounters counters;

  bool matches(const TokenSequence& x_t) const;
  std::size_t slots() const { return slot_tokens.size(); }
};

/// Full forward that (re)builds `cache`. Every gated slot counts as recomputed.
DenoiserOutput initialize_cache(const TrainableDenoiser& model, const TokenSequence& x_t, double t,
                                bool condition_dropped, CacheState& cache);

/// Gated forward against an initialized cache. Throws PreconditionError when
/// the cache is uninitialized or its layout differs from x_t.
DenoiserOutput cached_forward(const TrainableDenoiser& model, const TokenSequence& x_t, double t,
                              bool condition_dropped, CacheState& cache, const CacheConfig& config,
                              std::vector<CacheAuditEntry>* audit = nullptr);

/// Denoiser adaptor holding one cache per condition flag. A layout change
/// (e.g. a dynamic-length extension) rebuilds the cache.
class CachedDenoiser final : public Denoiser {
 public:
  CachedDenoiser(const TrainableDenoiser& model, CacheConfig config);

  DenoiserOutput predict(const TokenSequence& x_t, double t, bool condition_dropped) override;
  std::size_t vocab_size() const override { return model_.vocab_size(); }
  void begin_generation() override;
  CacheCounters cache_counters() const override;

  const CacheConfig& config() const { return config_; }
  const std::vector<CacheAuditEntry>& audit_log() const { return audit_; }
  const CacheState& state(bool condition_dropped) const { return caches_[condition_dropped ? 1 : 0]; }

 private:
  const TrainableDenoiser& model_;
  CacheConfig config_;
  CacheState caches_[2];
  std::vector<CacheAuditEntry> audit_;
};

struct SpeedupReport {
  double uncached_ms = 0.0;
  double cached_ms = 0.0;
  /// uncached_ms / cached_ms.
  double ratio = 1.0;
  double recompute_fraction = 1.0;
  std::vector<double> per_step_recompute_fraction;
  /// TV between cached and uncached output distributions, when measured.
  std::optional<double> tv_drift;
  /// Published speedup, kept for context only.
  double reference_ratio = 1.2;
};

void to_json(nlohmann::json& j, const SpeedupReport& r);

/// Compares two traces of the same seeded generation. Throws ComparisonError
/// when the step grids differ.
SpeedupReport speedup_report(const GenerationTrace& uncached, const GenerationTrace& cached,
                             std::optional<double> tv_drift = std::nullopt);

}  // namespace dfm
