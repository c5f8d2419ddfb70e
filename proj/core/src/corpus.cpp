// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dfm/corpus.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "dfm/rng.hpp"

namespace dfm {
namespace {

TokenId draw_content(const CorpusSpec& spec, std::mt19937_64& rng) {
  const std::size_t n = spec.vocab_size - spec.first_content;
  const auto k = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
  return static_cast<TokenId>(spec.first_content + std::min(k, n - 1));
}

std::vector<TokenId> draw_sequence(const CorpusSpec& spec, std::size_t len, std::mt19937_64& rng) {
  std::vector<TokenId> s(len);
  for (auto& t : s) t = draw_content(spec, rng);
  return s;
}

TokenSequence join(const std::vector<TokenId>& instruction, const std::vector<TokenId>& response) {
  std::vector<TokenId> toks(instruction);
  toks.insert(toks.end(), response.begin(), response.end());
  std::vector<Segment> segs(instruction.size(), Segment::Instruction);
  segs.resize(toks.size(), Segment::Response);
  return TokenSequence(std::move(toks), std::move(segs));
}

}  // namespace

void to_json(nlohmann::json& j, const CorpusSpec& s) {
  j = {{"kind", s.kind},
       {"vocab_size", s.vocab_size},
       {"instruction_length", s.instruction_length},
       {"response_length", s.response_length},
       {"patterns", s.patterns},
       {"examples", s.examples},
       {"block_size", s.block_size},
       {"pad_id", s.pad_id},
       {"eos_id", s.eos_id},
       {"first_content", s.first_content}};
}

void from_json(const nlohmann::json& j, CorpusSpec& s) {
  CorpusSpec d;
  d.kind = j.value("kind", d.kind);
  d.vocab_size = j.value("vocab_size", d.vocab_size);
  d.instruction_length = j.value("instruction_length", d.instruction_length);
  d.response_length = j.value("response_length", d.response_length);
  d.patterns = j.value("patterns", d.patterns);
  d.examples = j.value("examples", d.examples);
  d.block_size = j.value("block_size", d.block_size);
  d.pad_id = j.value("pad_id", d.pad_id);
  d.eos_id = j.value("eos_id", d.eos_id);
  d.first_content = j.value("first_content", d.first_content);
  s = d;
}

TextCorpus make_text_corpus(const CorpusSpec& spec, std::mt19937_64& rng) {
  if (spec.first_content >= spec.vocab_size) throw ConfigError("corpus has no content tokens");
  if (spec.instruction_length == 0) throw ConfigError("corpus instruction must be nonempty");
  TextCorpus c;

  if (spec.kind == "copy") {
    for (std::size_t e = 0; e < spec.examples; ++e) {
      auto instr = draw_sequence(spec, spec.instruction_length, rng);
      c.data.examples.push_back({join(instr, instr), "text", {}, 0});
    }
    c.instruction = c.data.examples.empty()
                        ? draw_sequence(spec, spec.instruction_length, rng)
                        : std::vector<TokenId>(c.data.examples[0].target.tokens.begin(),
                                               c.data.examples[0].target.tokens.begin() +
                                                   static_cast<std::ptrdiff_t>(spec.instruction_length));
    const auto seq = join(c.instruction, c.instruction);
    c.target = SequenceDistribution::delta(seq.tokens);
    c.layout = seq;
    return c;
  }

  c.instruction = draw_sequence(spec, spec.instruction_length, rng);
  std::vector<std::vector<TokenId>> responses;
  if (spec.kind == "constant") {
    responses.push_back(draw_sequence(spec, spec.response_length, rng));
  } else if (spec.kind == "pattern") {
    const std::size_t n = spec.vocab_size - spec.first_content;
    double space = 1.0;
    for (std::size_t i = 0; i < spec.response_length; ++i) space *= static_cast<double>(n);
    if (spec.patterns == 0 || static_cast<double>(spec.patterns) > space) {
      throw ConfigError("pattern count exceeds the number of distinct responses");
    }
    std::set<std::vector<TokenId>> seen;
    while (responses.size() < spec.patterns) {
      auto r = draw_sequence(spec, spec.response_length, rng);
      if (seen.insert(r).second) responses.push_back(std::move(r));
    }
  } else if (spec.kind == "long_response") {
    if (spec.block_size == 0) throw ConfigError("block_size must be positive");
    auto r = draw_sequence(spec, spec.response_length, rng);
    r.push_back(spec.eos_id);
    const std::size_t padded = (r.size() + spec.block_size - 1) / spec.block_size * spec.block_size;
    r.resize(padded, spec.pad_id);
    responses.push_back(std::move(r));
  } else {
    throw ConfigError("unknown corpus kind: " + spec.kind);
  }

  const double p = 1.0 / static_cast<double>(responses.size());
  for (const auto& r : responses) {
    const auto seq = join(c.instruction, r);
    c.target.add(seq.tokens, p);
    c.layout = seq;
  }
  for (std::size_t e = 0; e < spec.examples; ++e) {
    c.data.examples.push_back({join(c.instruction, responses[e % responses.size()]), "text", {}, 0});
  }
  return c;
}

void to_json(nlohmann::json& j, const RetrievalSpec& s) {
  j = {{"classes", s.classes}, {"pairs", s.pairs}, {"radius", s.radius}, {"stddev", s.stddev}};
}

void from_json(const nlohmann::json& j, RetrievalSpec& s) {
  RetrievalSpec d;
  d.classes = j.value("classes", d.classes);
  d.pairs = j.value("pairs", d.pairs);
  d.radius = j.value("radius", d.radius);
  d.stddev = j.value("stddev", d.stddev);
  if (d.classes == 0) throw ConfigError("retrieval corpus needs at least one class");
  s = d;
}

std::vector<RetrievalPair> make_paired_retrieval_corpus(const RetrievalSpec& spec,
                                                        const ToyTokenizer& tokenizer,
                                                        const TokenLayout& layout,
                                                        const RetrievalTokens& tokens,
                                                        std::mt19937_64& rng) {
  if (spec.classes != tokens.classes) throw ConfigError("class count differs from the token layout");
  std::vector<std::size_t> labels;
  const auto points = gaussian_mixture(spec.pairs, spec.classes, spec.radius, spec.stddev, rng, &labels);
  std::vector<RetrievalPair> out;
  out.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::size_t c = labels[i];
    RetrievalPair p;
    p.label = c;
    p.point = points[i];
    p.text = TokenSequence::response_only(
        {tokens.caption, tokens.class_token(c), tokens.eos, tokens.tag_token(c)});
    auto codes = layout.tokens(tokenizer.tokenize(points[i]).indices);
    codes.push_back(tokens.eos);
    codes.push_back(tokens.tag_token(c));
    p.signal = TokenSequence::response_only(std::move(codes));
    out.push_back(std::move(p));
  }
  return out;
}

TokenSequence strip_after_eos(const TokenSequence& seq, TokenId eos) {
  for (std::size_t i = seq.size(); i-- > 0;) {
    if (seq.tokens[i] == eos) {
      const auto end = static_cast<std::ptrdiff_t>(i + 1);
      return TokenSequence(std::vector<TokenId>(seq.tokens.begin(), seq.tokens.begin() + end),
                           std::vector<Segment>(seq.segments.begin(), seq.segments.begin() + end));
    }
  }
  throw PreconditionError("sequence contains no EOS token");
}

}  // namespace dfm
