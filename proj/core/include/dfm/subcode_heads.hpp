// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dfm/mlp.hpp"
#include "dfm/optim.hpp"

namespace dfm {

enum class HeadMode { Sequential, Parallel };

/// Predicts M sub-codebook indices from one hidden state.
///
/// Each slot has its own tanh MLP head. In Sequential mode head m also sees
/// one-hot encodings of the indices chosen for slots < m. Parallel heads are
/// widened so both modes have (nearly) the same parameter count; head 0 is
/// identical in both modes for a given seed.
class SubcodeHeads {
 public:
  SubcodeHeads(HeadMode mode, std::size_t hidden_dim, std::vector<std::size_t> book_sizes,
               std::size_t inner_width, std::uint64_t seed);

  HeadMode mode() const { return mode_; }
  std::size_t num_slots() const { return sizes_.size(); }
  std::size_t hidden_dim() const { return hidden_; }
  std::size_t parameter_count() const;

  /// Logits of slot m. `prefix` must hold at least m indices in Sequential
  /// mode and is ignored in Parallel mode.
  std::vector<double> logits(std::size_t slot, std::span<const double> hidden,
                             std::span<const std::size_t> prefix) const;

  /// Greedy decode: Sequential feeds each argmax into later slots.
  std::vector<std::size_t> decode(std::span<const double> hidden) const;

  /// One optimizer step of teacher-forced cross-entropy; returns the mean
  /// loss per slot before the update.
  double train_step(const std::vector<std::vector<double>>& hiddens,
                    const std::vector<std::vector<std::size_t>>& gold);

 private:
  std::vector<double> head_input(std::size_t slot, std::span<const double> hidden,
                                 std::span<const std::size_t> prefix) const;

  HeadMode mode_;
  std::size_t hidden_;
  std::vector<std::size_t> sizes_;
  std::vector<Mlp> heads_;
  Optimizer optimizer_;
};

std::vector<std::size_t> decode_subcodes(const SubcodeHeads& heads, std::span<const double> hidden);

enum class PrefixSource { Greedy, Gold };

/// Fraction of correct predictions per slot. With PrefixSource::Gold,
/// Sequential heads are conditioned on the gold indices of earlier slots
/// (teacher-forced, as in next-token accuracy).
std::vector<double> slot_accuracy(const SubcodeHeads& heads,
                                  const std::vector<std::vector<double>>& hiddens,
                                  const std::vector<std::vector<std::size_t>>& gold,
                                  PrefixSource prefix = PrefixSource::Gold);

/// Fraction of examples with every slot correct under greedy decoding.
double joint_accuracy(const SubcodeHeads& heads, const std::vector<std::vector<double>>& hiddens,
                      const std::vector<std::vector<std::size_t>>& gold);

}  // namespace dfm
