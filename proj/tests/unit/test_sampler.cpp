// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dfm/denoiser.hpp"
#include "dfm/metrics.hpp"
#include "dfm/sampler.hpp"
#include "dfm/velocity.hpp"

namespace dfm {
namespace {

PathSchedule line3() { return PathSchedule::metric({0, 1, 2, 1, 0, 1, 2, 1, 0}, 3); }

DenoiserOutput certain(std::size_t positions, std::size_t k, TokenId target) {
  DenoiserOutput out;
  out.logits = Matrix(positions, k, -1e30);
  for (std::size_t i = 0; i < positions; ++i) out.logits(i, target) = 0.0;
  return out;
}

TEST(EulerStep, JumpProbabilityIsOneMinusExpOfRateTimesStep) {
  const auto s = line3();
  const double t = 0.5;
  const double lambda = jump_law(s, 2, 0, t).total_rate;
  const double h = 0.2 / lambda;
  const std::size_t n = 200000;
  const auto x = TokenSequence::response_only(std::vector<TokenId>(n, 2));
  const auto step = euler_step(x, t, h, certain(n, 3, 0), s, CounterRng(7), 0);
  const double freq = static_cast<double>(step.jumps) / static_cast<double>(n);
  EXPECT_NEAR(freq, 0.18126924692201818, 0.003);
  // Landing law follows the normalized rates.
  std::size_t to0 = 0;
  for (TokenId v : step.next.tokens) to0 += v == 0;
  EXPECT_NEAR(static_cast<double>(to0) / static_cast<double>(step.jumps), 0.975711102320736793, 0.005);
}

TEST(EulerStep, FixedSegmentsAreCopiedAndFinalStepLands) {
  const auto s = line3();
  TokenSequence x({1, 2, 2, 0}, {Segment::Instruction, Segment::Response, Segment::Response, Segment::Pad});
  const auto last = euler_step(x, 0.75, 0.25, certain(4, 3, 1), s, CounterRng(1), 3);
  EXPECT_EQ(last.next.tokens, (std::vector<TokenId>{1, 1, 1, 0}));
  EXPECT_EQ(last.jumps, 2u);
}

TEST(EulerStep, ArgmaxFinalPolicy) {
  const auto s = line3();
  DenoiserOutput out;
  out.logits = Matrix(1, 3);
  out.logits.data = {0.0, 0.1, -0.1};
  const auto x = TokenSequence::response_only({0});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EXPECT_EQ(euler_step(x, 0.5, 0.5, out, s, CounterRng(seed), 1, FinalStepPolicy::ArgmaxX1).next.tokens[0], 1u);
  }
}

TEST(EulerStep, MixtureResamplesWithinBudget) {
  const auto s = PathSchedule::mixture(3);
  const auto x = TokenSequence::response_only(std::vector<TokenId>(10, 2));
  const auto step = euler_step(x, 0.0, 0.25, certain(10, 3, 0), s, CounterRng(3), 0);
  EXPECT_EQ(step.jumps, 3u);  // ceil(10 * 0.25)
}

TEST(EulerStep, RejectsBadArguments) {
  const auto s = line3();
  const auto x = TokenSequence::response_only({0, 1});
  EXPECT_THROW(euler_step(x, 0.9, 0.2, certain(2, 3, 0), s, CounterRng(1), 0), DomainError);
  EXPECT_THROW(euler_step(x, 0.5, 0.0, certain(2, 3, 0), s, CounterRng(1), 0), DomainError);
  EXPECT_THROW(euler_step(x, 0.5, 0.1, certain(3, 3, 0), s, CounterRng(1), 0), SizeError);
}

TEST(CfgCombine, LinearExtrapolation) {
  Matrix c(1, 2), u(1, 2);
  c.data = {1.0, 3.0};
  u.data = {0.0, 1.0};
  EXPECT_EQ(cfg_combine(c, u, 1.0), c);
  EXPECT_EQ(cfg_combine(c, u, 0.0), u);
  EXPECT_EQ(cfg_combine(c, u, 2.0).data, (std::vector<double>{2.0, 5.0}));
  EXPECT_THROW(cfg_combine(c, Matrix(2, 2), 1.0), SizeError);
}

TEST(Generate, DeterministicGivenSeedAndLandsInSupport) {
  SequenceDistribution q;
  q.add({1, 0, 2}, 0.5);
  q.add({1, 2, 0}, 0.5);
  OracleDenoiser oracle(q, line3());
  const std::vector<TokenId> instr{1};
  const auto prompt = TokenSequence::prompt(instr, 2, 0);
  SamplerConfig cfg;
  cfg.steps = 32;
  const auto a = generate(oracle, prompt, cfg, line3(), 99);
  const auto b = generate(oracle, prompt, cfg, line3(), 99);
  EXPECT_EQ(a.sequence, b.sequence);
  EXPECT_EQ(a.trace.steps.size(), 32u);
  EXPECT_EQ(a.trace.steps[0].sequence.size(), 3u);
  EXPECT_TRUE(a.sequence.tokens == q.support[0] || a.sequence.tokens == q.support[1]);
}

TEST(Generate, GuidanceUsesUnconditionalPass) {
  struct Counting final : Denoiser {
    int cond = 0, uncond = 0;
    DenoiserOutput predict(const TokenSequence& x, double, bool dropped) override {
      (dropped ? uncond : cond)++;
      return certain(x.size(), 3, 0);
    }
    std::size_t vocab_size() const override { return 3; }
  } d;
  SamplerConfig cfg;
  cfg.steps = 4;
  cfg.guidance_scale = 2.0;
  const std::vector<TokenId> instr{1};
  generate(d, TokenSequence::prompt(instr, 2, 0), cfg, line3(), 1);
  EXPECT_EQ(d.cond, 4);
  EXPECT_EQ(d.uncond, 4);
}

TEST(Generate, RequiresInstruction) {
  OracleDenoiser oracle(SequenceDistribution::delta({0, 1}), line3());
  EXPECT_THROW(generate(oracle, TokenSequence::response_only({0, 0}), SamplerConfig{}, line3(), 1),
               PreconditionError);
}

// EOS becomes likely at one absolute position.
struct EosAt final : Denoiser {
  explicit EosAt(std::size_t pos) : pos(pos) {}
  std::size_t pos;
  DenoiserOutput predict(const TokenSequence& x, double, bool) override {
    DenoiserOutput out;
    out.logits = Matrix(x.size(), 4, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      out.logits(i, 1) = i == pos ? 10.0 : -10.0;
      out.logits(i, 2) = i > pos ? 10.0 : 0.0;  // filler after EOS
    }
    return out;
  }
  std::size_t vocab_size() const override { return 4; }
};

TEST(DynamicLength, SettlesOnBlockMultiples) {
  const auto s = PathSchedule::mixture(4);
  SamplerConfig cfg;
  cfg.steps = 4;
  cfg.block_size = 64;
  const std::vector<TokenId> instr{3};
  EosAt d(1 + 70);
  const auto r = dynamic_length_generate(d, instr, cfg, s, {}, 5);
  EXPECT_EQ(r.sequence.size() - 1, 128u);
  EXPECT_EQ(r.trace.probes, 2u);
  EXPECT_FALSE(r.trace.truncated);

  cfg.eos_threshold = 1e-12;
  EXPECT_EQ(dynamic_length_generate(d, instr, cfg, s, {}, 5).sequence.size() - 1, 64u);

  cfg.eos_threshold = 0.5;
  cfg.max_blocks = 1;
  const auto t = dynamic_length_generate(d, instr, cfg, s, {}, 5);
  EXPECT_TRUE(t.trace.truncated);
  EXPECT_EQ(t.sequence.size() - 1, 64u);
}

TEST(PadAfterEos, RewritesTail) {
  TokenSequence x({3, 2, 1, 2, 2}, {Segment::Instruction, Segment::Response, Segment::Response,
                                    Segment::Response, Segment::Response});
  const auto y = pad_after_eos(x, {});
  EXPECT_EQ(y.tokens, (std::vector<TokenId>{3, 2, 1, 0, 0}));
  EXPECT_EQ(y.segments[3], Segment::Pad);
  EXPECT_EQ(y.segments[2], Segment::Response);
}

TEST(Trace, JsonLinesFields) {
  GenerationTrace tr;
  tr.steps.push_back({0, 0.0, 2, 1.5, {}, {}});
  tr.steps.push_back({1, 0.5, 0, 0.5, {}, {}});
  std::ostringstream os;
  write_trace_jsonl(os, tr);
  std::istringstream is(os.str());
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.size(), 4u);
    EXPECT_EQ(j.at("step").get<int>(), n);
    ++n;
  }
  EXPECT_EQ(n, 2);
  EXPECT_DOUBLE_EQ(tr.total_ms(), 2.0);
}

TEST(SamplerConfig, JsonAndValidation) {
  SamplerConfig c;
  c.steps = 17;
  c.final_policy = FinalStepPolicy::ArgmaxX1;
  c.trace_sequences = true;
  EXPECT_EQ(nlohmann::json(c).get<SamplerConfig>(), c);
  c.eos_threshold = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.eos_threshold = 0.5;
  c.steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"final_policy", "greedy"}}).get<SamplerConfig>(), ConfigError);
}

}  // namespace
}  // namespace dfm
