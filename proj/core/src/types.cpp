// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dfm/types.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dfm/rng.hpp"

namespace dfm {

const char* to_string(Segment s) {
  switch (s) {
    case Segment::Instruction:
      return "instruction";
    case Segment::Response:
      return "response";
    case Segment::Pad:
      return "pad";
  }
  return "?";
}

TokenSequence::TokenSequence(std::vector<TokenId> toks, std::vector<Segment> segs)
    : tokens(std::move(toks)), segments(std::move(segs)) {
  if (tokens.size() != segments.size()) {
    throw SizeError("token and segment vectors differ in length");
  }
}

TokenSequence TokenSequence::response_only(std::vector<TokenId> toks) {
  std::vector<Segment> segs(toks.size(), Segment::Response);
  return TokenSequence(std::move(toks), std::move(segs));
}

TokenSequence TokenSequence::prompt(std::span<const TokenId> instruction, std::size_t response_len,
                                    TokenId fill) {
  TokenSequence seq;
  seq.tokens.assign(instruction.begin(), instruction.end());
  seq.segments.assign(instruction.size(), Segment::Instruction);
  seq.tokens.resize(instruction.size() + response_len, fill);
  seq.segments.resize(instruction.size() + response_len, Segment::Response);
  return seq;
}

std::size_t TokenSequence::count(Segment s) const {
  return static_cast<std::size_t>(std::count(segments.begin(), segments.end(), s));
}

void TokenSequence::validate(std::size_t vocab_size, TokenId pad_id) const {
  if (tokens.size() != segments.size()) throw SizeError("token/segment length mismatch");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= vocab_size) {
      throw DomainError("token " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                        " outside vocabulary of size " + std::to_string(vocab_size));
    }
    if (segments[i] == Segment::Pad && tokens[i] != pad_id) {
      throw DomainError("pad slot " + std::to_string(i) + " does not carry the PAD id");
    }
  }
}

Vocabulary::Vocabulary(std::size_t size, std::size_t embedding_dim, std::vector<double> embeddings,
                       SpecialTokens specials)
    : size_(size), dim_(embedding_dim), embeddings_(std::move(embeddings)), specials_(specials) {
  if (size_ < 2) throw DomainError("vocabulary needs at least two tokens");
  if (embeddings_.size() != size_ * dim_) throw SizeError("embedding table has wrong size");
  if (specials_.pad == specials_.eos) throw DomainError("PAD and EOS must differ");
  if (specials_.pad >= size_ || specials_.eos >= size_) {
    throw DomainError("special token id outside vocabulary");
  }
  for (std::size_t k = 0; k < size_; ++k) {
    double norm2 = 0.0;
    for (double v : embedding(static_cast<TokenId>(k))) norm2 += v * v;
    if (std::abs(std::sqrt(norm2) - 1.0) > 1e-6) {
      throw DomainError("embedding " + std::to_string(k) + " is not unit norm");
    }
  }
}

Vocabulary Vocabulary::random(std::size_t size, std::size_t embedding_dim, std::uint64_t seed,
                              SpecialTokens specials) {
  std::mt19937_64 gen(seed);
  std::vector<double> emb(size * embedding_dim);
  for (std::size_t k = 0; k < size; ++k) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (std::size_t j = 0; j < embedding_dim; ++j) {
        double g = standard_normal(gen);
        emb[k * embedding_dim + j] = g;
        norm2 += g * g;
      }
    } while (norm2 < 1e-12);
    double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t j = 0; j < embedding_dim; ++j) emb[k * embedding_dim + j] *= inv;
  }
  return Vocabulary(size, embedding_dim, std::move(emb), specials);
}

std::span<const double> Vocabulary::embedding(TokenId id) const {
  if (id >= size_) throw DomainError("token id outside vocabulary");
  return {embeddings_.data() + static_cast<std::size_t>(id) * dim_, dim_};
}

std::vector<double> Vocabulary::cosine_distances() const {
  std::vector<double> d(size_ * size_, 0.0);
  for (std::size_t i = 0; i < size_; ++i) {
    auto ei = embedding(static_cast<TokenId>(i));
    for (std::size_t j = i + 1; j < size_; ++j) {
      auto ej = embedding(static_cast<TokenId>(j));
      double dot = 0.0;
      for (std::size_t k = 0; k < dim_; ++k) dot += ei[k] * ej[k];
      double dist = std::clamp(1.0 - dot, 0.0, 2.0);
      d[i * size_ + j] = dist;
      d[j * size_ + i] = dist;
    }
  }
  return d;
}

}  // namespace dfm
