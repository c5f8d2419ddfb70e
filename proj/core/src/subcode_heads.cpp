// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dfm/subcode_heads.hpp"

#include <algorithm>
#include <cmath>

#include "dfm/rng.hpp"
#include "dfm/types.hpp"

namespace dfm {

SubcodeHeads::SubcodeHeads(HeadMode mode, std::size_t hidden_dim, std::vector<std::size_t> book_sizes,
                           std::size_t inner_width, std::uint64_t seed)
    : mode_(mode),
      hidden_(hidden_dim),
      sizes_(std::move(book_sizes)),
      optimizer_(OptimizerConfig{OptimizerKind::Adam, 1e-2}) {
  if (sizes_.empty() || hidden_ == 0 || inner_width == 0) throw DomainError("empty head layout");
  std::size_t prefix = 0;
  for (std::size_t m = 0; m < sizes_.size(); ++m) {
    const std::size_t k = sizes_[m];
    // Every head gets its own stream so head m is the same in both modes
    // whenever its input width and inner width agree.
    std::mt19937_64 gen(derive_seed(seed, "head-" + std::to_string(m)));
    if (mode_ == HeadMode::Sequential) {
      heads_.emplace_back(hidden_ + prefix, inner_width, k, gen);
    } else {
      // Match the Sequential head's parameter count with a wider inner layer.
      const std::size_t seq = (hidden_ + prefix) * inner_width + inner_width + inner_width * k + k;
      const double per_unit = static_cast<double>(hidden_ + 1 + k);
      const auto width = static_cast<std::size_t>(
          std::llround(static_cast<double>(seq - k) / per_unit));
      heads_.emplace_back(hidden_, std::max<std::size_t>(1, width), k, gen);
    }
    prefix += k;
  }
}

std::size_t SubcodeHeads::parameter_count() const {
  std::size_t n = 0;
  for (const auto& h : heads_) n += h.parameter_count();
  return n;
}

std::vector<double> SubcodeHeads::head_input(std::size_t slot, std::span<const double> hidden,
                                             std::span<const std::size_t> prefix) const {
  if (hidden.size() != hidden_) throw SizeError("hidden state width mismatch");
  std::vector<double> in(hidden.begin(), hidden.end());
  if (mode_ == HeadMode::Parallel) return in;
  if (prefix.size() < slot) throw SizeError("sequential head needs the preceding indices");
  for (std::size_t j = 0; j < slot; ++j) {
    if (prefix[j] >= sizes_[j]) throw DomainError("prefix index out of range");
    const std::size_t base = in.size();
    in.resize(base + sizes_[j], 0.0);
    in[base + prefix[j]] = 1.0;
  }
  return in;
}

std::vector<double> SubcodeHeads::logits(std::size_t slot, std::span<const double> hidden,
                                         std::span<const std::size_t> prefix) const {
  if (slot >= heads_.size()) throw DomainError("slot out of range");
  const auto in = head_input(slot, hidden, prefix);
  std::vector<double> act;
  return heads_[slot].forward(in, act);
}

std::vector<std::size_t> SubcodeHeads::decode(std::span<const double> hidden) const {
  std::vector<std::size_t> out;
  for (std::size_t m = 0; m < heads_.size(); ++m) {
    const auto z = logits(m, hidden, out);
    out.push_back(static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()));
  }
  return out;
}

double SubcodeHeads::train_step(const std::vector<std::vector<double>>& hiddens,
                                const std::vector<std::vector<std::size_t>>& gold) {
  if (hiddens.size() != gold.size() || hiddens.empty()) throw SizeError("bad head batch");
  std::vector<Mlp> grads;
  for (const auto& h : heads_) grads.push_back(h.zeros_like());
  const double inv = 1.0 / static_cast<double>(hiddens.size());
  double loss = 0.0;
  std::vector<double> act;
  for (std::size_t n = 0; n < hiddens.size(); ++n) {
    if (gold[n].size() != heads_.size()) throw SizeError("gold code has the wrong slot count");
    for (std::size_t m = 0; m < heads_.size(); ++m) {
      const auto in = head_input(m, hiddens[n], gold[n]);
      auto p = heads_[m].forward(in, act);
      softmax_inplace(p);
      loss -= std::log(std::max(p[gold[n][m]], 1e-300)) * inv;
      p[gold[n][m]] -= 1.0;
      for (double& v : p) v *= inv;
      heads_[m].backward(in, act, p, grads[m]);
    }
  }
  std::vector<Matrix*> params;
  std::vector<const Matrix*> gs;
  for (std::size_t m = 0; m < heads_.size(); ++m) {
    for (Matrix* t : heads_[m].tensors()) params.push_back(t);
    for (Matrix* t : grads[m].tensors()) gs.push_back(t);
  }
  optimizer_.step(params, gs);
  return loss / static_cast<double>(heads_.size());
}

std::vector<std::size_t> decode_subcodes(const SubcodeHeads& heads, std::span<const double> hidden) {
  return heads.decode(hidden);
}

std::vector<double> slot_accuracy(const SubcodeHeads& heads,
                                  const std::vector<std::vector<double>>& hiddens,
                                  const std::vector<std::vector<std::size_t>>& gold,
                                  PrefixSource prefix) {
  if (hiddens.size() != gold.size()) throw SizeError("one gold code per hidden state required");
  std::vector<double> acc(heads.num_slots(), 0.0);
  if (hiddens.empty()) return acc;
  for (std::size_t n = 0; n < hiddens.size(); ++n) {
    if (prefix == PrefixSource::Greedy) {
      const auto pred = heads.decode(hiddens[n]);
      for (std::size_t m = 0; m < pred.size(); ++m) acc[m] += pred[m] == gold[n][m] ? 1.0 : 0.0;
      continue;
    }
    for (std::size_t m = 0; m < heads.num_slots(); ++m) {
      const auto z = heads.logits(m, hiddens[n], gold[n]);
      const auto best = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
      acc[m] += best == gold[n][m] ? 1.0 : 0.0;
    }
  }
  for (double& a : acc) a /= static_cast<double>(hiddens.size());
  return acc;
}

double joint_accuracy(const SubcodeHeads& heads, const std::vector<std::vector<double>>& hiddens,
                      const std::vector<std::vector<std::size_t>>& gold) {
  if (hiddens.empty()) return 0.0;
  double hits = 0.0;
  for (std::size_t n = 0; n < hiddens.size(); ++n) hits += heads.decode(hiddens[n]) == gold[n] ? 1.0 : 0.0;
  return hits / static_cast<double>(hiddens.size());
}

}  // namespace dfm
