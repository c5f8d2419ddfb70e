// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dfm/checkpoint.hpp"
#include "dfm/tokenizer.hpp"

namespace dfm {
namespace {

std::vector<Point2> corpus(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return gaussian_mixture(n, 8, 4.0, 0.5, rng);
}

TokenizerConfig small() {
  TokenizerConfig c;
  c.hidden = 16;
  c.steps = 300;
  c.batch_size = 32;
  return c;
}

TEST(Tokenizer, StraightThroughGradientMatchesSurrogate) {
  ToyTokenizer tok(small());
  const auto pts = corpus(16, 1);
  tok.initialize_codebook(pts);
  TokenizerGradients rec, commit;
  tok.gradients(pts, rec, commit);
  const auto offsets = tok.quantization_offsets(pts);
  EXPECT_NEAR(tok.surrogate_reconstruction(pts, offsets), tok.reconstruction_mse(pts), 1e-12);

  const double h = 1e-6;
  auto check = [&](Mlp& net, Mlp& grad) {
    auto params = net.tensors();
    auto grads = grad.tensors();
    for (std::size_t t = 0; t < params.size(); ++t) {
      for (std::size_t k = 0; k < params[t]->data.size(); k += 3) {
        double& w = params[t]->data[k];
        const double saved = w;
        w = saved + h;
        const double up = tok.surrogate_reconstruction(pts, offsets);
        w = saved - h;
        const double down = tok.surrogate_reconstruction(pts, offsets);
        w = saved;
        const double fd = (up - down) / (2 * h);
        const double an = grads[t]->data[k];
        EXPECT_LT(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}), 1e-4);
      }
    }
  };
  check(tok.encoder(), rec.encoder);
  check(tok.decoder(), rec.decoder);
}

TEST(Tokenizer, TrainingLowersReconstruction) {
  const auto pts = corpus(1024, 2);
  ToyTokenizer untrained(small());
  untrained.initialize_codebook(pts);
  const auto tok = fit_toy_modality(pts, small());
  EXPECT_EQ(tok.step_count(), 300u);
  EXPECT_LT(tok.reconstruction_mse(pts), 0.5 * untrained.reconstruction_mse(pts));
  for (const auto& hist : tok.usage(pts)) {
    EXPECT_EQ(hist.size(), 16u);
    EXPECT_GT(usage_entropy(hist), std::log(4.0));
  }
}

TEST(Tokenizer, FitIsDeterministic) {
  const auto pts = corpus(256, 3);
  auto cfg = small();
  cfg.steps = 50;
  const auto a = fit_toy_modality(pts, cfg);
  const auto b = fit_toy_modality(pts, cfg);
  EXPECT_EQ(a.reconstruction_mse(pts), b.reconstruction_mse(pts));
  EXPECT_EQ(a.codebook().book(0), b.codebook().book(0));
}

TEST(Tokenizer, CheckpointRoundTrip) {
  const auto pts = corpus(128, 4);
  auto cfg = small();
  cfg.steps = 20;
  const auto tok = fit_toy_modality(pts, cfg);
  const auto back = tokenizer_from_checkpoint(decode_checkpoint(encode_checkpoint(to_checkpoint(tok))));
  EXPECT_EQ(back.config(), tok.config());
  for (const auto& p : pts) {
    EXPECT_EQ(back.tokenize(p).indices, tok.tokenize(p).indices);
    const auto r1 = back.reconstruct(p), r2 = tok.reconstruct(p);
    EXPECT_NEAR(r1.x, r2.x, 1e-4);
    EXPECT_NEAR(r1.y, r2.y, 1e-4);
  }
}

TEST(Tokenizer, BadInputs) {
  auto cfg = small();
  cfg.ema_decay = 1.0;
  EXPECT_THROW(ToyTokenizer{cfg}, DomainError);
  ToyTokenizer tok(small());
  EXPECT_THROW(tok.initialize_codebook({}), PreconditionError);
  EXPECT_THROW(tok.set_codebook(Codebook::random(2, 8, 4, 1)), SizeError);
  EXPECT_THROW(fit_toy_modality({}, small()), PreconditionError);
}

TEST(Tokenizer, ConfigJsonRoundTrip) {
  auto c = small();
  c.optimizer.learning_rate = 1e-3;
  c.dead_code_steps = 7;
  EXPECT_EQ(nlohmann::json(c).get<TokenizerConfig>(), c);
}

TEST(UsageEntropy, KnownValues) {
  const std::vector<std::size_t> uniform(8, 5), single{0, 9, 0}, empty{0, 0};
  EXPECT_NEAR(usage_entropy(uniform), std::log(8.0), 1e-14);
  EXPECT_EQ(usage_entropy(single), 0.0);
  EXPECT_EQ(usage_entropy(empty), 0.0);
}

TEST(GaussianMixture, LabelsCycleAndMeansSitOnCircle) {
  std::mt19937_64 rng(5);
  std::vector<std::size_t> labels;
  const auto pts = gaussian_mixture(8000, 4, 3.0, 0.1, rng, &labels);
  ASSERT_EQ(labels.size(), 8000u);
  std::vector<Point2> mean(4);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_EQ(labels[i], i % 4);
    mean[labels[i]].x += pts[i].x / 2000.0;
    mean[labels[i]].y += pts[i].y / 2000.0;
  }
  EXPECT_NEAR(mean[0].x, 3.0, 0.01);
  EXPECT_NEAR(mean[1].y, 3.0, 0.01);
  EXPECT_NEAR(mean[2].x, -3.0, 0.01);
  const auto m = to_matrix(pts);
  EXPECT_EQ(m(7, 1), pts[7].y);
}

}  // namespace
}  // namespace dfm
