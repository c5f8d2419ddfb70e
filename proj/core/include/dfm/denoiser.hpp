// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dfm/schedule.hpp"
#include "dfm/tensor.hpp"
#include "dfm/types.hpp"

namespace dfm {

/// Per-position logits predicting x1, plus optional intermediate features.
///
/// Row i of `logits` is the prediction for sequence position i (the
/// shift-by-one bookkeeping is internal to the model). Feature matrices are
/// indexed by model slot: slot 0 is the begin-of-sequence state, slot j + 1
/// carries token j.
struct DenoiserOutput {
  Matrix logits;
  std::vector<Matrix> hidden_features;
  std::vector<Matrix> value_features;
  /// Set by the oracle when x_t has zero likelihood under q.
  bool zero_likelihood = false;

  std::size_t positions() const { return logits.rows; }
  std::size_t vocab_size() const { return logits.cols; }
  /// softmax of one row.
  std::vector<double> probabilities(std::size_t position) const;
};

/// Reuse statistics reported by caching denoisers.
struct CacheCounters {
  std::uint64_t recomputed = 0;
  std::uint64_t reused = 0;

  double recompute_fraction() const {
    auto total = recomputed + reused;
    return total == 0 ? 1.0 : static_cast<double>(recomputed) / static_cast<double>(total);
  }
  friend bool operator==(const CacheCounters&, const CacheCounters&) = default;
};

/// Anything that maps (x_t, t) to p_{1|t}. `predict` may mutate internal state
/// (caches), so sessions are not shared between threads.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual DenoiserOutput predict(const TokenSequence& x_t, double t, bool condition_dropped) = 0;
  virtual std::size_t vocab_size() const = 0;
  /// Called at the start of every generation; clears per-session state.
  virtual void begin_generation() {}
  /// Cumulative counters since begin_generation (zero for non-caching models).
  virtual CacheCounters cache_counters() const { return {}; }
};

/// Exact Bayes posterior p_{1|t}(x1^i | x_t) for an enumerable q:
///   logits[i][v] = log sum_{x1 : x1^i = v} q(x1) prod_j p_t(x_t^j | x1^j),
/// normalized per row. With `condition_dropped`, instruction positions are
/// left out of the likelihood (the unconditional posterior). Throws SizeError
/// when |support(q)| > support_cap. Zero total likelihood yields uniform rows
/// and sets `zero_likelihood`.
DenoiserOutput oracle_posterior(const SequenceDistribution& q, const PathSchedule& schedule,
                                const TokenSequence& x_t, double t, bool condition_dropped = false,
                                std::size_t support_cap = 100'000);

class OracleDenoiser final : public Denoiser {
 public:
  OracleDenoiser(SequenceDistribution q, PathSchedule schedule)
      : q_(std::move(q)), schedule_(std::move(schedule)) {}

  DenoiserOutput predict(const TokenSequence& x_t, double t, bool condition_dropped) override {
    return oracle_posterior(q_, schedule_, x_t, t, condition_dropped);
  }
  std::size_t vocab_size() const override { return schedule_.vocab_size(); }
  const SequenceDistribution& target() const { return q_; }

 private:
  SequenceDistribution q_;
  PathSchedule schedule_;
};

}  // namespace dfm
