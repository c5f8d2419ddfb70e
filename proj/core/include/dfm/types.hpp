// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfm {

using TokenId = std::uint32_t;

// Error taxonomy. Everything derives from std::runtime_error or
// std::logic_error so callers may catch broadly.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};
struct SizeError : std::length_error {
  using std::length_error::length_error;
};
struct PreconditionError : std::logic_error {
  using std::logic_error::logic_error;
};
struct UnsupportedScheduleError : std::logic_error {
  using std::logic_error::logic_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PlanError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ComparisonError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Segment : std::uint8_t { Instruction, Response, Pad };

const char* to_string(Segment s);

/// A fixed-length row of vocabulary indices with per-position segment labels.
struct TokenSequence {
  std::vector<TokenId> tokens;
  std::vector<Segment> segments;

  TokenSequence() = default;
  TokenSequence(std::vector<TokenId> toks, std::vector<Segment> segs);

  /// All positions labelled Response.
  static TokenSequence response_only(std::vector<TokenId> toks);
  /// Instruction tokens followed by `response_len` Response slots holding `fill`.
  static TokenSequence prompt(std::span<const TokenId> instruction, std::size_t response_len,
                              TokenId fill);

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  std::size_t count(Segment s) const;

  /// Throws DomainError when an index is >= vocab_size or a Pad slot does not
  /// carry `pad_id`.
  void validate(std::size_t vocab_size, TokenId pad_id) const;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Token ids for the special symbols every vocabulary carries.
struct SpecialTokens {
  TokenId pad = 0;
  TokenId eos = 1;
};

/// K tokens with unit-norm embeddings used by metric paths and retrieval.
class Vocabulary {
 public:
  Vocabulary(std::size_t size, std::size_t embedding_dim, std::vector<double> embeddings,
             SpecialTokens specials);

  /// Seeded random unit vectors.
  static Vocabulary random(std::size_t size, std::size_t embedding_dim, std::uint64_t seed,
                           SpecialTokens specials);

  std::size_t size() const { return size_; }
  std::size_t embedding_dim() const { return dim_; }
  std::span<const double> embedding(TokenId id) const;
  const SpecialTokens& specials() const { return specials_; }
  TokenId pad_id() const { return specials_.pad; }
  TokenId eos_id() const { return specials_.eos; }

  /// Cosine distance 1 - <e_i, e_j>, K x K row-major, clamped to [0, 2].
  std::vector<double> cosine_distances() const;

 private:
  std::size_t size_;
  std::size_t dim_;
  std::vector<double> embeddings_;
  SpecialTokens specials_;
};

}  // namespace dfm
