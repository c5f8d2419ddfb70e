// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dfm/denoiser.hpp"
#include "dfm/rng.hpp"
#include "dfm/schedule.hpp"

namespace dfm {

enum class FinalStepPolicy { SampleX1, ArgmaxX1 };

struct SamplerConfig {
  /// Uniform grid {0, h, ..., 1} with h = 1 / steps.
  std::size_t steps = 64;
  double guidance_scale = 1.0;
  std::size_t block_size = 64;
  std::size_t max_blocks = 4;
  /// Extend the response while max EOS probability in the last block is below this.
  double eos_threshold = 0.5;
  FinalStepPolicy final_policy = FinalStepPolicy::SampleX1;
  /// Time at which the EOS probe evaluates the freshly initialized region.
  double probe_time = 0.0;
  /// Keep a copy of the sequence after every step in the trace.
  bool trace_sequences = true;

  void validate() const;
  friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

void to_json(nlohmann::json& j, const SamplerConfig& c);
void from_json(const nlohmann::json& j, SamplerConfig& c);

struct StepRecord {
  std::size_t step = 0;
  double t = 0.0;
  std::size_t jumps = 0;
  double ms = 0.0;
  CacheCounters cache;  // reuse counters accumulated during this step
  TokenSequence sequence;
};

struct GenerationTrace {
  std::vector<StepRecord> steps;
  std::size_t probes = 0;
  bool truncated = false;

  double total_ms() const;
  CacheCounters cache_totals() const;
};

struct GenerationResult {
  TokenSequence sequence;
  GenerationTrace trace;
};

struct StepOutcome {
  TokenSequence next;
  std::size_t jumps = 0;
};

/// One Euler step of the CTMC from t to t + h.
///
/// For each Response coordinate: sample x1 from softmax(logits), compute the
/// jump law, jump with probability 1 - exp(-h lambda). When t + h reaches 1 the
/// coordinate is set to the sampled (or argmax) x1 instead. Instruction and Pad
/// coordinates are copied. Mixture schedules take the posterior-resampling
/// path: at most ceil(free * h) mismatching coordinates are set to their sampled
/// x1 per step (not kinetic-optimal).
///
/// Randomness is drawn from `rng` keyed by (step, coordinate), so coordinates
/// are independent of evaluation order.
StepOutcome euler_step(const TokenSequence& x_t, double t, double h, const DenoiserOutput& output,
                       const PathSchedule& schedule, const CounterRng& rng, std::uint64_t step,
                       FinalStepPolicy policy = FinalStepPolicy::SampleX1);

/// uncond + s (cond - uncond), elementwise.
Matrix cfg_combine(const Matrix& cond, const Matrix& uncond, double scale);

/// Response coordinates drawn from the t = 0 law.
TokenSequence initialize_response(const TokenSequence& prompt, const PathSchedule& schedule,
                                  const CounterRng& rng);

/// Full denoise of `prompt` (instruction + Response slots) over the time grid.
GenerationResult generate(Denoiser& denoiser, const TokenSequence& prompt,
                          const SamplerConfig& config, const PathSchedule& schedule,
                          std::uint64_t seed);

/// Grows the response in block_size increments until the EOS probe clears
/// the threshold (or max_blocks is hit, setting trace.truncated), then
/// denoises at the settled length. Tokens after the first response EOS are
/// rewritten to PAD.
GenerationResult dynamic_length_generate(Denoiser& denoiser, std::span<const TokenId> instruction,
                                         const SamplerConfig& config, const PathSchedule& schedule,
                                         SpecialTokens specials, std::uint64_t seed);

/// Rewrites every Response position after the first EOS to PAD (segment Pad).
TokenSequence pad_after_eos(TokenSequence seq, SpecialTokens specials);

/// JSON-lines, one {"step","t","jumps","ms"} record per step.
void write_trace_jsonl(std::ostream& os, const GenerationTrace& trace);

}  // namespace dfm
