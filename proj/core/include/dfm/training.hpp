// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dfm/optim.hpp"
#include "dfm/quantizer.hpp"
#include "dfm/schedule.hpp"
#include "dfm/tokenizer.hpp"
#include "dfm/transformer.hpp"

namespace dfm {

/// Mean over Response positions of -log softmax(logits[i])[x1^i].
/// Throws PreconditionError when x1 has no Response position.
double dfm_ce_loss(const Matrix& logits, const TokenSequence& x1);

/// Loss plus d loss / d logits: (softmax - onehot) / R on Response rows,
/// exactly zero elsewhere.
std::pair<double, Matrix> dfm_ce_loss_with_grad(const Matrix& logits, const TokenSequence& x1);

/// Mean over Response positions of sum_v -p(v) log softmax(logits)(v).
double expected_cross_entropy(const Matrix& logits, const Matrix& target_probs,
                              const TokenSequence& layout);

struct LossBreakdown {
  double l_ce = 0.0;
  double l_rec_sig = 0.0;
  double l_rec_aux = 0.0;
  std::array<double, 3> coefficients{1.0, 1.0, 1.0};
  double l_overall = 0.0;
  /// Unweighted gradient norms of the three losses (zero when inactive).
  std::array<double, 3> grad_norms{};
  std::string modality;
  std::size_t examples = 0;
  std::size_t dropped_conditions = 0;
  /// True when this micro-batch completed an accumulation window.
  bool applied = false;

  double recompose() const {
    return coefficients[0] * l_ce + coefficients[1] * l_rec_sig + coefficients[2] * l_rec_aux;
  }
};

struct Batch {
  std::string modality;
  std::vector<std::size_t> indices;
};

struct BatchPlan {
  std::vector<Batch> batches;
  std::size_t accumulation_steps = 1;
  std::vector<std::string> warnings;
};

/// Buckets examples by modality tag, shuffles each bucket, cuts it into
/// batches of `batch_size` (the last one may be short) and interleaves the
/// buckets round-robin. `modalities` fixes the bucket order; tags absent from
/// the manifest are skipped with a warning. Without it, order of first
/// appearance is used.
BatchPlan plan_batches(std::span<const std::string> manifest, std::size_t batch_size,
                       std::size_t accumulation_steps, std::mt19937_64& rng,
                       std::span<const std::string> modalities = {});

struct GradNormConfig {
  bool enabled = true;
  double alpha = 1.0;
  double learning_rate = 0.025;
  /// Update every n-th eligible optimizer step.
  std::size_t update_every = 1;

  friend bool operator==(const GradNormConfig&, const GradNormConfig&) = default;
};

struct GradNormUpdate {
  std::vector<double> weights;
  bool updated = false;
  std::string warning;
};

/// One GradNorm step on the loss weights.
///
/// G_k = w_k * grad_norms[k] (the weighted norm), target_k = mean(G) * r_k^alpha
/// with r_k the loss ratio L_k / L0_k divided by its mean. Each w_k moves by
/// -lr * sign(G_k - target_k) * grad_norms[k] / mean(grad_norms); the result
/// is clamped positive and rescaled to sum to the task count.
GradNormUpdate gradnorm_update(std::span<const double> weights, std::span<const double> grad_norms,
                               std::span<const double> initial_losses,
                               std::span<const double> current_losses, double alpha,
                               double learning_rate);

struct TrainingExample {
  /// Clean sequence with segment labels.
  TokenSequence target;
  std::string modality = "text";
  /// Points whose codes occupy Response positions from `signal_offset`.
  /// Re-tokenized every step when a tokenizer is attached.
  std::vector<Point2> signal_points;
  std::size_t signal_offset = 0;
};

struct Dataset {
  std::vector<TrainingExample> examples;

  std::vector<std::string> manifest() const;
};

struct TrainingConfig {
  std::size_t batch_size = 64;
  std::size_t accumulation_steps = 1;
  /// Optimizer steps.
  std::size_t steps = 500;
  double cfg_drop_prob = 0.1;
  OptimizerConfig optimizer;
  /// "constant" or "cosine" (decays to zero over `steps`).
  std::string lr_schedule = "constant";
  GradNormConfig gradnorm;
  std::uint64_t seed = 1;

  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

void to_json(nlohmann::json& j, const GradNormConfig& c);
void from_json(const nlohmann::json& j, GradNormConfig& c);
void to_json(nlohmann::json& j, const TrainingConfig& c);
void from_json(const nlohmann::json& j, TrainingConfig& c);

/// One noised training input.
struct PreparedExample {
  TokenSequence x1;
  TokenSequence x_t;
  double t = 0.0;
  bool condition_dropped = false;
};

/// Deterministic order-fixed pairwise summation. Leaves are merged as a
/// binary counter would carry, so the reduction tree depends only on the
/// number of leaves, not on who produced them or when.
template <typename T, typename Add>
class PairwiseSum {
 public:
  explicit PairwiseSum(Add add) : add_(std::move(add)) {}

  void push(T leaf) {
    std::size_t level = 0;
    while (!stack_.empty() && stack_.back().first == level) {
      T left = std::move(stack_.back().second);
      stack_.pop_back();
      add_(left, leaf);
      leaf = std::move(left);
      ++level;
    }
    stack_.emplace_back(level, std::move(leaf));
  }

  bool empty() const { return stack_.empty(); }

  /// Folds the remaining partial sums right to left and resets.
  std::optional<T> collapse() {
    if (stack_.empty()) return std::nullopt;
    T acc = std::move(stack_.back().second);
    stack_.pop_back();
    while (!stack_.empty()) {
      T left = std::move(stack_.back().second);
      stack_.pop_back();
      add_(left, acc);
      acc = std::move(left);
    }
    return acc;
  }

 private:
  Add add_;
  std::vector<std::pair<std::size_t, T>> stack_;
};

/// Drives DFM training of a TrainableDenoiser, optionally joint with a toy
/// tokenizer on signal batches.
class Trainer {
 public:
  Trainer(TrainableDenoiser& model, PathSchedule schedule, TrainingConfig config);

  /// Signal-modality batches additionally train `tokenizer`, whose codes are
  /// flattened through `layout`. The model's signal codebook is refreshed
  /// from the tokenizer before every signal batch.
  void attach_tokenizer(ToyTokenizer* tokenizer, TokenLayout layout);

  /// Draws t, x_t and the condition-drop flag for one example.
  PreparedExample prepare(const TrainingExample& example);

  /// Forward/backward on one single-modality micro-batch. The optimizer is
  /// applied after every accumulation_steps calls. Throws PlanError when the
  /// batch mixes modalities.
  LossBreakdown training_step(const Dataset& data, const Batch& batch);

  /// Runs config.steps optimizer steps over repeated batch plans. When `csv`
  /// is given, one row per micro-batch is written.
  std::vector<LossBreakdown> fit(const Dataset& data, std::ostream* csv = nullptr);

  const std::array<double, 3>& coefficients() const { return coefficients_; }
  std::size_t examples_seen() const { return examples_seen_; }
  std::size_t dropped_conditions() const { return dropped_; }
  std::size_t optimizer_steps() const { return optimizer_.steps(); }
  const std::vector<std::string>& warnings() const { return warnings_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  TokenSequence current_target(const TrainingExample& example) const;
  void apply_update();

  using Accumulator = PairwiseSum<TransformerWeights, void (*)(TransformerWeights&, const TransformerWeights&)>;

  TrainableDenoiser& model_;
  PathSchedule schedule_;
  TrainingConfig config_;
  Optimizer optimizer_;
  std::mt19937_64 rng_;
  ToyTokenizer* tokenizer_ = nullptr;
  std::optional<TokenLayout> layout_;
  std::array<double, 3> coefficients_{1.0, 1.0, 1.0};
  std::optional<std::array<double, 3>> initial_losses_;
  std::size_t gradnorm_eligible_ = 0;
  Accumulator step_sum_;
  std::size_t micro_batches_ = 0;
  std::size_t examples_seen_ = 0;
  std::size_t dropped_ = 0;
  std::vector<std::string> warnings_;
};

void write_loss_csv_header(std::ostream& os);
void write_loss_csv_row(std::ostream& os, std::size_t step, const LossBreakdown& row);

/// Model vs oracle on shared noised draws from q.
struct OracleComparison {
  /// Mean dfm_ce_loss against the sampled x1.
  double sampled_ce = 0.0;
  /// Mean cross-entropy of the oracle posterior against the model.
  double cross_entropy = 0.0;
  /// Mean entropy of the oracle posterior (the loss floor).
  double oracle_entropy = 0.0;
  std::size_t draws = 0;

  double excess() const { return cross_entropy - oracle_entropy; }
};

/// `layout` fixes the segment labels of every sequence in q (Instruction
/// tokens must agree across the support).
OracleComparison compare_to_oracle(const TrainableDenoiser& model, const SequenceDistribution& q,
                                   const TokenSequence& layout, const PathSchedule& schedule,
                                   std::size_t draws, std::uint64_t seed);

}  // namespace dfm
