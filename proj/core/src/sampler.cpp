// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dfm/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "dfm/velocity.hpp"

namespace dfm {
namespace {

constexpr double kTimeTolerance = 1e-12;

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

CacheCounters operator-(const CacheCounters& a, const CacheCounters& b) {
  return {a.recomputed - b.recomputed, a.reused - b.reused};
}

// Runs the step loop on an already-initialized sequence.
GenerationResult denoise(Denoiser& denoiser, TokenSequence seq, const SamplerConfig& config,
                         const PathSchedule& schedule, const CounterRng& rng) {
  GenerationResult result;
  denoiser.begin_generation();
  const double h = 1.0 / static_cast<double>(config.steps);
  for (std::size_t n = 0; n < config.steps; ++n) {
    const double t = static_cast<double>(n) * h;
    const auto start = Clock::now();
    const auto before = denoiser.cache_counters();
    DenoiserOutput out = denoiser.predict(seq, t, false);
    if (config.guidance_scale != 1.0) {
      DenoiserOutput uncond = denoiser.predict(seq, t, true);
      out.logits = cfg_combine(out.logits, uncond.logits, config.guidance_scale);
    }
    auto step = euler_step(seq, t, h, out, schedule, rng, n, config.final_policy);
    seq = std::move(step.next);
    StepRecord rec;
    rec.step = n;
    rec.t = t;
    rec.jumps = step.jumps;
    rec.cache = denoiser.cache_counters() - before;
    rec.ms = elapsed_ms(start);
    if (config.trace_sequences) rec.sequence = seq;
    result.trace.steps.push_back(std::move(rec));
  }
  result.sequence = std::move(seq);
  return result;
}

}  // namespace

void SamplerConfig::validate() const {
  if (steps < 1) throw ConfigError("sampler needs at least one step");
  if (block_size < 1) throw ConfigError("block size must be positive");
  if (max_blocks < 1) throw ConfigError("max_blocks must be positive");
  if (!(eos_threshold > 0.0 && eos_threshold < 1.0)) {
    throw ConfigError("eos_threshold must lie in (0,1)");
  }
  if (!(guidance_scale >= 0.0)) throw ConfigError("guidance scale must be nonnegative");
  if (!(probe_time >= 0.0 && probe_time <= 1.0)) throw ConfigError("probe_time outside [0,1]");
}

void to_json(nlohmann::json& j, const SamplerConfig& c) {
  j = nlohmann::json{{"steps", c.steps},
                     {"guidance_scale", c.guidance_scale},
                     {"block_size", c.block_size},
                     {"max_blocks", c.max_blocks},
                     {"eos_threshold", c.eos_threshold},
                     {"final_policy", c.final_policy == FinalStepPolicy::SampleX1 ? "sample" : "argmax"},
                     {"probe_time", c.probe_time}};
}

void from_json(const nlohmann::json& j, SamplerConfig& c) {
  SamplerConfig d;
  c.steps = j.value("steps", d.steps);
  c.guidance_scale = j.value("guidance_scale", d.guidance_scale);
  c.block_size = j.value("block_size", d.block_size);
  c.max_blocks = j.value("max_blocks", d.max_blocks);
  c.eos_threshold = j.value("eos_threshold", d.eos_threshold);
  const auto policy = j.value("final_policy", std::string("sample"));
  if (policy == "sample") {
    c.final_policy = FinalStepPolicy::SampleX1;
  } else if (policy == "argmax") {
    c.final_policy = FinalStepPolicy::ArgmaxX1;
  } else {
    throw ConfigError("unknown final_policy '" + policy + "'");
  }
  c.probe_time = j.value("probe_time", d.probe_time);
}

double GenerationTrace::total_ms() const {
  double s = 0.0;
  for (const auto& r : steps) s += r.ms;
  return s;
}

CacheCounters GenerationTrace::cache_totals() const {
  CacheCounters c;
  for (const auto& r : steps) {
    c.recomputed += r.cache.recomputed;
    c.reused += r.cache.reused;
  }
  return c;
}

StepOutcome euler_step(const TokenSequence& x_t, double t, double h, const DenoiserOutput& output,
                       const PathSchedule& schedule, const CounterRng& rng, std::uint64_t step,
                       FinalStepPolicy policy) {
  if (!(h > 0.0) || !(t >= 0.0) || t + h > 1.0 + kTimeTolerance) {
    throw DomainError("euler step requires h > 0 and t + h <= 1");
  }
  if (output.positions() != x_t.size() || output.vocab_size() != schedule.vocab_size()) {
    throw SizeError("denoiser output is not aligned with x_t");
  }
  const bool final_step = t + h >= 1.0 - kTimeTolerance;
  StepOutcome outcome{x_t, 0};
  auto& next = outcome.next;

  std::vector<std::size_t> free;
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    if (x_t.segments[i] == Segment::Response) free.push_back(i);
  }

  // Step 1 for every free coordinate: x1 ~ p_{1|t}(. | x_t).
  std::vector<TokenId> x1(x_t.size(), 0);
  for (std::size_t i : free) {
    auto probs = output.probabilities(i);
    if (final_step && policy == FinalStepPolicy::ArgmaxX1) {
      x1[i] = static_cast<TokenId>(argmax(probs));
    } else {
      x1[i] = static_cast<TokenId>(
          sample_categorical(probs, rng.uniform(CounterRng::kPosterior, step, i)));
    }
  }

  if (final_step) {
    for (std::size_t i : free) {
      if (next.tokens[i] != x1[i]) ++outcome.jumps;
      next.tokens[i] = x1[i];
    }
    return outcome;
  }

  if (schedule.kind() == PathKind::Mixture) {
    std::vector<std::size_t> mismatched;
    for (std::size_t i : free) {
      if (x_t.tokens[i] != x1[i]) mismatched.push_back(i);
    }
    std::sort(mismatched.begin(), mismatched.end(), [&](std::size_t a, std::size_t b) {
      return rng.bits(CounterRng::kFallbackOrder, step, a) <
             rng.bits(CounterRng::kFallbackOrder, step, b);
    });
    const auto budget = static_cast<std::size_t>(
        std::ceil(static_cast<double>(free.size()) * h - kTimeTolerance));
    for (std::size_t n = 0; n < std::min(budget, mismatched.size()); ++n) {
      next.tokens[mismatched[n]] = x1[mismatched[n]];
      ++outcome.jumps;
    }
    return outcome;
  }

  for (std::size_t i : free) {
    const TokenId current = x_t.tokens[i];
    if (current == x1[i]) continue;
    JumpLaw law = jump_law(schedule, current, x1[i], t);
    if (!(law.total_rate > 0.0)) continue;
    const double z = rng.uniform(CounterRng::kJumpTest, step, i);
    if (z <= -std::expm1(-h * law.total_rate)) {
      next.tokens[i] = static_cast<TokenId>(sample_categorical(
          law.target_distribution, rng.uniform(CounterRng::kJumpTarget, step, i)));
      ++outcome.jumps;
    }
  }
  return outcome;
}

Matrix cfg_combine(const Matrix& cond, const Matrix& uncond, double scale) {
  if (cond.rows != uncond.rows || cond.cols != uncond.cols) {
    throw SizeError("conditional and unconditional logits differ in shape");
  }
  Matrix out(cond.rows, cond.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = uncond.data[i] + scale * (cond.data[i] - uncond.data[i]);
  }
  return out;
}

TokenSequence initialize_response(const TokenSequence& prompt, const PathSchedule& schedule,
                                  const CounterRng& rng) {
  TokenSequence seq = prompt;
  auto base = schedule.base();
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.segments[i] != Segment::Response) continue;
    seq.tokens[i] =
        static_cast<TokenId>(sample_categorical(base, rng.uniform(CounterRng::kInit, 0, i)));
  }
  return seq;
}

GenerationResult generate(Denoiser& denoiser, const TokenSequence& prompt,
                          const SamplerConfig& config, const PathSchedule& schedule,
                          std::uint64_t seed) {
  config.validate();
  if (prompt.count(Segment::Instruction) == 0) {
    throw PreconditionError("generation needs a nonempty instruction segment");
  }
  if (denoiser.vocab_size() != schedule.vocab_size()) {
    throw SizeError("denoiser and schedule vocabularies differ");
  }
  CounterRng rng(seed);
  return denoise(denoiser, initialize_response(prompt, schedule, rng), config, schedule, rng);
}

GenerationResult dynamic_length_generate(Denoiser& denoiser, std::span<const TokenId> instruction,
                                         const SamplerConfig& config, const PathSchedule& schedule,
                                         SpecialTokens specials, std::uint64_t seed) {
  config.validate();
  if (instruction.empty()) throw PreconditionError("generation needs a nonempty instruction");
  if (denoiser.vocab_size() != schedule.vocab_size()) {
    throw SizeError("denoiser and schedule vocabularies differ");
  }
  CounterRng rng(seed);
  std::size_t blocks = 1;
  TokenSequence seq;
  std::size_t probes = 0;
  bool truncated = false;
  for (;;) {
    seq = initialize_response(TokenSequence::prompt(instruction, blocks * config.block_size, 0),
                              schedule, rng);
    auto out = denoiser.predict(seq, config.probe_time, false);
    ++probes;
    double eos_conf = 0.0;
    const std::size_t last_block = instruction.size() + (blocks - 1) * config.block_size;
    for (std::size_t i = last_block; i < seq.size(); ++i) {
      eos_conf = std::max(eos_conf, out.probabilities(i)[specials.eos]);
    }
    if (eos_conf >= config.eos_threshold) break;
    if (blocks >= config.max_blocks) {
      truncated = true;
      break;
    }
    ++blocks;
  }
  auto result = denoise(denoiser, std::move(seq), config, schedule, rng);
  result.trace.probes = probes;
  result.trace.truncated = truncated;
  result.sequence = pad_after_eos(std::move(result.sequence), specials);
  return result;
}

TokenSequence pad_after_eos(TokenSequence seq, SpecialTokens specials) {
  bool seen = false;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.segments[i] != Segment::Response) continue;
    if (seen) {
      seq.tokens[i] = specials.pad;
      seq.segments[i] = Segment::Pad;
    } else if (seq.tokens[i] == specials.eos) {
      seen = true;
    }
  }
  return seq;
}

void write_trace_jsonl(std::ostream& os, const GenerationTrace& trace) {
  for (const auto& r : trace.steps) {
    nlohmann::json j{{"step", r.step}, {"t", r.t}, {"jumps", r.jumps}, {"ms", r.ms}};
    os << j.dump() << '\n';
  }
}

}  // namespace dfm
