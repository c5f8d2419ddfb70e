// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dfm/quantizer.hpp"
#include "dfm/schedule.hpp"
#include "dfm/tokenizer.hpp"
#include "dfm/training.hpp"
#include "dfm/types.hpp"

namespace dfm {

/// Small deterministic text grammars with closed-form response laws.
///
///   copy           response repeats a random instruction
///   constant       one fixed instruction, one fixed response
///   pattern        one fixed instruction, `patterns` equiprobable responses
///   long_response  one fixed response of response_length tokens + EOS,
///                  PAD-filled to the next multiple of block_size
struct CorpusSpec {
  std::string kind = "pattern";
  std::size_t vocab_size = 16;
  std::size_t instruction_length = 1;
  std::size_t response_length = 6;
  std::size_t patterns = 8;
  std::size_t examples = 512;
  std::size_t block_size = 64;
  TokenId pad_id = 0;
  TokenId eos_id = 1;
  /// Content tokens are drawn from [first_content, vocab_size).
  TokenId first_content = 2;

  friend bool operator==(const CorpusSpec&, const CorpusSpec&) = default;
};

void to_json(nlohmann::json& j, const CorpusSpec& s);
void from_json(const nlohmann::json& j, CorpusSpec& s);

struct TextCorpus {
  Dataset data;
  /// Law of the full sequence given `instruction` (instruction tokens included).
  SequenceDistribution target;
  /// Segment labels shared by every sequence in `target`.
  TokenSequence layout;
  std::vector<TokenId> instruction;
};

TextCorpus make_text_corpus(const CorpusSpec& spec, std::mt19937_64& rng);

/// Token ids used by the paired retrieval corpus.
struct RetrievalTokens {
  std::size_t classes = 8;
  TokenId pad = 0;
  TokenId eos = 1;
  TokenId caption = 2;

  TokenId class_token(std::size_t c) const { return static_cast<TokenId>(3 + c); }
  TokenId tag_token(std::size_t c) const { return static_cast<TokenId>(3 + classes + c); }
  TokenId signal_first() const { return static_cast<TokenId>(3 + 2 * classes); }
};

struct RetrievalSpec {
  std::size_t classes = 8;
  std::size_t pairs = 100;
  double radius = 4.0;
  double stddev = 0.5;

  friend bool operator==(const RetrievalSpec&, const RetrievalSpec&) = default;
};

void to_json(nlohmann::json& j, const RetrievalSpec& s);
void from_json(const nlohmann::json& j, RetrievalSpec& s);

/// One ground-truth pair. Both sequences end in [EOS, TAG_c]: text is
/// [CAPTION, CLASS_c, EOS, TAG_c], signal is [codes of the point..., EOS, TAG_c].
struct RetrievalPair {
  TokenSequence text;
  TokenSequence signal;
  std::size_t label = 0;
  Point2 point;
};

/// Labels cycle through the classes, so class counts differ by at most one.
std::vector<RetrievalPair> make_paired_retrieval_corpus(const RetrievalSpec& spec,
                                                        const ToyTokenizer& tokenizer,
                                                        const TokenLayout& layout,
                                                        const RetrievalTokens& tokens,
                                                        std::mt19937_64& rng);

/// The sequence up to and including its EOS (the retrieval query form).
TokenSequence strip_after_eos(const TokenSequence& seq, TokenId eos);

}  // namespace dfm
