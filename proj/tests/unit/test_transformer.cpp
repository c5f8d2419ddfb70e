// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "dfm/checkpoint.hpp"
#include "dfm/training.hpp"
#include "dfm/transformer.hpp"

namespace dfm {
namespace {

ArchitectureConfig tiny(std::size_t layers = 2) {
  ArchitectureConfig a;
  a.vocab_size = 7;
  a.max_length = 6;
  a.width = 8;
  a.layers = layers;
  a.heads = 2;
  a.mlp_ratio = 2;
  return a;
}

TEST(Transformer, OutputShape) {
  const TrainableDenoiser m(tiny(), 3);
  const auto out = m.forward(TokenSequence::response_only({1, 2, 3}), 0.4, false, nullptr, true);
  EXPECT_EQ(out.logits.rows, 3u);
  EXPECT_EQ(out.logits.cols, 7u);
  ASSERT_EQ(out.hidden_features.size(), 2u);
  EXPECT_EQ(out.hidden_features[0].rows, 4u);  // BOS + 3 tokens
}

TEST(Transformer, ShiftByOne) {
  // Without attention layers each slot only sees its own token, so the token
  // at position j can only move the logits read for position j + 1.
  const TrainableDenoiser m(tiny(0), 5);
  const auto a = m.forward(TokenSequence::response_only({1, 2, 3, 4}), 0.5, false);
  const auto b = m.forward(TokenSequence::response_only({1, 6, 3, 4}), 0.5, false);
  for (std::size_t i = 0; i < 4; ++i) {
    const bool same = std::equal(a.logits.row(i).begin(), a.logits.row(i).end(), b.logits.row(i).begin());
    EXPECT_EQ(same, i != 2) << "position " << i;
  }
}

TEST(Transformer, ConditionDropReplacesInstructionTokens) {
  const TrainableDenoiser m(tiny(), 5);
  TokenSequence x({3, 4, 5}, {Segment::Instruction, Segment::Response, Segment::Response});
  TokenSequence padded({0, 4, 5}, {Segment::Instruction, Segment::Response, Segment::Response});
  EXPECT_EQ(m.input_token(x, 0, true), 0u);
  EXPECT_EQ(m.input_token(x, 1, true), 4u);
  EXPECT_EQ(m.forward(x, 0.3, true).logits, m.forward(padded, 0.3, false).logits);
  EXPECT_NE(m.forward(x, 0.3, true).logits, m.forward(x, 0.3, false).logits);
}

TEST(Transformer, TimeChangesOutput) {
  const TrainableDenoiser m(tiny(), 5);
  const auto x = TokenSequence::response_only({1, 2});
  EXPECT_NE(m.forward(x, 0.1, false).logits, m.forward(x, 0.9, false).logits);
}

TEST(Transformer, RejectsBadInputs) {
  const TrainableDenoiser m(tiny(), 5);
  EXPECT_THROW(m.forward(TokenSequence::response_only(std::vector<TokenId>(7, 1)), 0.5, false), SizeError);
  EXPECT_THROW(m.forward(TokenSequence::response_only({9}), 0.5, false), DomainError);
  EXPECT_THROW(m.forward(TokenSequence::response_only({1}), 1.5, false), DomainError);
  auto bad = tiny();
  bad.heads = 3;
  EXPECT_THROW(TrainableDenoiser(bad, 1), DomainError);
}

TEST(Transformer, SeededInitIsReproducible) {
  const TrainableDenoiser a(tiny(), 11), b(tiny(), 11), c(tiny(), 12);
  const auto x = TokenSequence::response_only({1, 2, 3});
  EXPECT_EQ(a.forward(x, 0.5, false).logits, b.forward(x, 0.5, false).logits);
  EXPECT_NE(a.forward(x, 0.5, false).logits, c.forward(x, 0.5, false).logits);
}

// Central differences on the CE loss for a sample of every tensor's entries.
TEST(Transformer, GradientsMatchFiniteDifferences) {
  auto arch = tiny();
  arch.vocab_size = 9;
  arch.signal_first_id = 7;
  arch.signal_dim = 2;
  TrainableDenoiser m(arch, 21);
  Matrix codes(2, 2);
  codes.data = {0.5, -1.0, 1.5, 0.25};
  m.set_signal_codebook(codes);
  TokenSequence x1({3, 8, 2, 7, 5}, {Segment::Instruction, Segment::Response, Segment::Response,
                                     Segment::Response, Segment::Response});
  TokenSequence xt({3, 7, 2, 1, 5}, x1.segments);

  auto loss = [&]() { return dfm_ce_loss(m.forward(xt, 0.37, false).logits, x1); };
  ForwardRecord rec;
  const auto out = m.forward(xt, 0.37, false, &rec);
  const auto [l, dlogits] = dfm_ce_loss_with_grad(out.logits, x1);
  EXPECT_NEAR(l, loss(), 1e-14);
  auto grads = m.weights().zeros_like();
  m.backward(rec, dlogits, grads);

  std::mt19937_64 pick(4);
  std::vector<std::pair<std::string, Matrix*>> params;
  m.weights().for_each([&](const std::string& n, Matrix& p) { params.emplace_back(n, &p); });
  std::vector<const Matrix*> gparams;
  grads.for_each([&](const std::string&, const Matrix& g) { gparams.push_back(&g); });
  ASSERT_EQ(params.size(), gparams.size());

  double worst = 0.0;
  std::size_t checked = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& w = *params[p].second;
    if (w.size() == 0) continue;
    for (int trial = 0; trial < 6; ++trial) {
      const std::size_t idx = pick() % w.size();
      const double keep = w.data[idx];
      const double h = 1e-5;
      w.data[idx] = keep + h;
      const double up = loss();
      w.data[idx] = keep - h;
      const double down = loss();
      w.data[idx] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double an = gparams[p]->data[idx];
      const double scale = std::max({std::abs(fd), std::abs(an), 1e-6});
      const double rel = std::abs(fd - an) / scale;
      worst = std::max(worst, rel);
      EXPECT_LT(rel, 1e-4) << params[p].first << "[" << idx << "] fd=" << fd << " an=" << an;
      ++checked;
    }
  }
  EXPECT_GT(checked, 100u);
}

TEST(Checkpoint, RoundTripThroughBytesAndDisk) {
  auto arch = tiny();
  arch.vocab_size = 9;
  arch.signal_first_id = 7;
  arch.signal_dim = 2;
  TrainableDenoiser m(arch, 8);
  Matrix codes(2, 2, 0.5);
  m.set_signal_codebook(codes);
  const auto ckpt = to_checkpoint(m);
  const auto bytes = encode_checkpoint(ckpt);
  EXPECT_EQ(encode_checkpoint(decode_checkpoint(bytes)), bytes);

  const auto path = std::filesystem::temp_directory_path() / "dfm_test_model.ckpt";
  write_checkpoint(path, ckpt);
  const auto back = denoiser_from_checkpoint(read_checkpoint(path));
  std::filesystem::remove(path);
  EXPECT_EQ(back.arch(), arch);
  EXPECT_EQ(back.signal_codebook(), codes);
  // Weights are stored as float32.
  const auto x = TokenSequence::response_only({1, 7, 8});
  const auto a = m.forward(x, 0.5, false).logits;
  const auto b = back.forward(x, 0.5, false).logits;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-5);
  // A reloaded model saves to identical bytes.
  EXPECT_EQ(encode_checkpoint(to_checkpoint(back)), bytes);
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::vector<std::uint8_t> junk{1, 2, 3};
  EXPECT_ANY_THROW(decode_checkpoint(junk));
  Checkpoint c;
  c.add("w", Matrix(2, 3, 1.0));
  Matrix wrong(3, 2);
  EXPECT_ANY_THROW(c.load_into("w", wrong));
  EXPECT_ANY_THROW(c.at("missing"));
}

}  // namespace
}  // namespace dfm
