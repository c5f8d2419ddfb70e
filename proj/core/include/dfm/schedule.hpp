// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dfm/types.hpp"

namespace dfm {

enum class PathKind { Mixture, Metric };
enum class KappaKind { Linear, Quadratic, Cosine };

/// Time schedule and base law for a factorized conditional probability path.
///
/// Mixture paths interpolate (1 - kappa(t)) p + kappa(t) delta_{x1}. kappa is
/// token-independent here; a per-token kappa would slot in at kappa_at().
/// Metric paths use softmax(-beta(t) d(x, x1)) with beta(t) = c (t / (1 - t))^a.
class PathSchedule {
 public:
  static constexpr double kDefaultClampEpsilon = 1e-3;

  static PathSchedule mixture(std::size_t vocab_size, KappaKind kappa = KappaKind::Linear);
  static PathSchedule mixture(std::vector<double> base, KappaKind kappa = KappaKind::Linear);
  /// All base mass on `mask_id` (masked-diffusion style).
  static PathSchedule masked(std::size_t vocab_size, TokenId mask_id,
                             KappaKind kappa = KappaKind::Linear);
  static PathSchedule metric(std::vector<double> distances, std::size_t vocab_size, double c = 3.0,
                             double a = 0.9);
  static PathSchedule metric(const Vocabulary& vocab, double c = 3.0, double a = 0.9);

  PathKind kind() const { return kind_; }
  std::size_t vocab_size() const { return vocab_size_; }
  KappaKind kappa_kind() const { return kappa_; }
  std::span<const double> base() const { return base_; }
  double c() const { return c_; }
  double a() const { return a_; }
  double clamp_epsilon() const { return clamp_eps_; }
  double distance(TokenId x, TokenId y) const { return distances_[x * vocab_size_ + y]; }
  std::span<const double> distances_from(TokenId x1) const {
    return {distances_.data() + x1 * vocab_size_, vocab_size_};
  }

 private:
  PathSchedule() = default;

  PathKind kind_ = PathKind::Mixture;
  std::size_t vocab_size_ = 0;
  KappaKind kappa_ = KappaKind::Linear;
  std::vector<double> base_;
  double c_ = 3.0;
  double a_ = 0.9;
  double clamp_eps_ = kDefaultClampEpsilon;
  std::vector<double> distances_;
};

/// kappa(t) for mixture schedules. Endpoints are exact.
double kappa_at(const PathSchedule& schedule, double t);

struct BetaValue {
  double value = 0.0;
  bool clamped = false;
};

/// beta(t) evaluated at min(t, 1 - eps_clamp).
BetaValue beta_at(const PathSchedule& schedule, double t);

/// Closed-form d(beta)/dt = c a t^(a-1) / (1 - t)^(a+1). The argument is clamped
/// into [eps_clamp, 1 - eps_clamp]: the derivative diverges at both ends when a < 1.
double beta_rate(const PathSchedule& schedule, double t);

/// p_t(x | x1) for one coordinate.
double conditional_prob(const PathSchedule& schedule, TokenId x, TokenId x1, double t);
/// log p_t(x | x1); -inf where the mixture law has no mass.
double log_conditional_prob(const PathSchedule& schedule, TokenId x, TokenId x1, double t);
/// Whole row p_t(. | x1).
std::vector<double> conditional_distribution(const PathSchedule& schedule, TokenId x1, double t);

enum class CorruptionScope { AllPositions, ResponseOnly };

/// Draws each coordinate independently from p_t(. | x1^i). With
/// ResponseOnly, instruction and pad coordinates are copied from x1.
TokenSequence sample_conditional(const PathSchedule& schedule, const TokenSequence& x1, double t,
                                 std::mt19937_64& rng,
                                 CorruptionScope scope = CorruptionScope::AllPositions);

/// Explicit distribution over sequences of a fixed length.
struct SequenceDistribution {
  std::size_t length = 0;
  std::vector<std::vector<TokenId>> support;
  std::vector<double> probs;

  void add(std::vector<TokenId> seq, double p);
  static SequenceDistribution delta(std::vector<TokenId> seq);
  /// Uniform over all vocab_size^length sequences.
  static SequenceDistribution uniform(std::size_t vocab_size, std::size_t length);
  double total() const;
};

/// Base-K index of a sequence, position 0 most significant.
std::size_t encode_state(std::span<const TokenId> seq, std::size_t vocab_size);
std::vector<TokenId> decode_state(std::size_t index, std::size_t vocab_size, std::size_t length);

/// Exact p_t(x) = sum_{x1} p_t(x | x1) q(x1) over all K^D states, by full
/// summation. Throws SizeError when |support(q)| * K^D exceeds `state_cap`.
std::vector<double> marginal_oracle(const PathSchedule& schedule, const SequenceDistribution& q,
                                    double t, std::size_t state_cap = 1'000'000);

/// Serializable schedule + vocabulary description.
struct ScheduleSpec {
  std::string kind = "metric";  // "metric" | "mixture"
  std::string kappa = "linear";  // "linear" | "quadratic" | "cosine"
  double c = 3.0;
  double a = 0.9;
  std::string base = "uniform";  // "uniform" | "mask"
  std::size_t vocab_size = 16;
  std::size_t embedding_dim = 16;
  std::uint64_t embedding_seed = 7;
  TokenId pad_id = 0;
  TokenId eos_id = 1;

  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

void to_json(nlohmann::json& j, const ScheduleSpec& spec);
void from_json(const nlohmann::json& j, ScheduleSpec& spec);

Vocabulary make_vocabulary(const ScheduleSpec& spec);
PathSchedule make_schedule(const ScheduleSpec& spec, const Vocabulary& vocab);

}  // namespace dfm
