// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dfm/mlp.hpp"
#include "dfm/optim.hpp"
#include "dfm/quantizer.hpp"
#include "dfm/types.hpp"

namespace dfm {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

struct TokenizerConfig {
  std::size_t hidden = 32;
  std::size_t embed_dim = 4;
  std::size_t sub_codebooks = 2;
  std::size_t codes_per_book = 16;
  double commitment_weight = 0.25;
  double ema_decay = 0.99;
  /// Codes unused for this many steps are re-seeded from recent encoder outputs.
  std::size_t dead_code_steps = 100;
  std::size_t steps = 3000;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer{OptimizerKind::Adam, 3e-3};
  std::uint64_t seed = 11;

  friend bool operator==(const TokenizerConfig&, const TokenizerConfig&) = default;
};

void to_json(nlohmann::json& j, const TokenizerConfig& c);
void from_json(const nlohmann::json& j, TokenizerConfig& c);

struct TokenizerStepResult {
  /// Mean squared reconstruction error ||decode(q(encode(p))) - p||^2.
  double reconstruction = 0.0;
  /// Mean commitment term ||z - sg(c)||^2.
  double commitment = 0.0;
  /// Norms of the unweighted per-loss gradients over all tokenizer parameters.
  double reconstruction_grad_norm = 0.0;
  double commitment_grad_norm = 0.0;
};

/// Parameter gradients in the same layout as the tokenizer's networks.
struct TokenizerGradients {
  Mlp encoder;
  Mlp decoder;
};

/// MLP encoder -> multi-codebook quantizer -> MLP decoder for 2D points.
/// Codes are learned by EMA; encoder gradients pass the quantizer
/// straight-through.
class ToyTokenizer {
 public:
  explicit ToyTokenizer(TokenizerConfig config);

  const TokenizerConfig& config() const { return config_; }
  const Codebook& codebook() const { return codebook_; }
  Mlp& encoder() { return encoder_; }
  Mlp& decoder() { return decoder_; }
  const Mlp& encoder() const { return encoder_; }
  const Mlp& decoder() const { return decoder_; }
  std::size_t step_count() const { return step_; }

  /// Replaces the codes (and resets EMA statistics). Layout must match config.
  void set_codebook(Codebook codebook);

  /// Codes are seeded from encoder outputs of `corpus` (called by fit).
  void initialize_codebook(std::span<const Point2> corpus);

  std::vector<double> encode(Point2 p) const;
  QuantizedCode tokenize(Point2 p) const;
  Point2 decode(std::span<const double> representative) const;
  Point2 reconstruct(Point2 p) const;

  /// Mean squared reconstruction error over `points`.
  double reconstruction_mse(std::span<const Point2> points) const;

  /// Unweighted gradients of both losses, averaged over `points`.
  TokenizerStepResult gradients(std::span<const Point2> points, TokenizerGradients& rec,
                                TokenizerGradients& commit) const;

  /// Reconstruction loss with the quantizer replaced by z + offset, where the
  /// offsets are held fixed (the straight-through surrogate). With offsets
  /// taken at the current parameters this equals the true loss and its
  /// gradient equals the straight-through gradient.
  double surrogate_reconstruction(std::span<const Point2> points,
                                  const std::vector<std::vector<double>>& offsets) const;
  std::vector<std::vector<double>> quantization_offsets(std::span<const Point2> points) const;

  /// One optimizer step on w_rec * L_rec + w_commit * beta * L_commit followed
  /// by the EMA codebook update and dead-code revival. Throws DomainError on
  /// a non-finite loss.
  TokenizerStepResult train_step(std::span<const Point2> batch, double w_rec = 1.0,
                                 double w_commit = 1.0);

  /// Histogram of code usage per sub-codebook over `points`.
  std::vector<std::vector<std::size_t>> usage(std::span<const Point2> points) const;

 private:
  void ema_update(const std::vector<std::vector<double>>& latents);

  TokenizerConfig config_;
  Mlp encoder_;
  Mlp decoder_;
  Codebook codebook_;
  std::vector<std::vector<double>> ema_count_;  // per book, per code
  std::vector<Matrix> ema_sum_;
  std::vector<std::vector<std::size_t>> last_used_;
  Optimizer optimizer_;
  std::mt19937_64 rng_;
  std::size_t step_ = 0;
};

/// Trains a tokenizer on `corpus` for config.steps minibatch steps.
ToyTokenizer fit_toy_modality(std::span<const Point2> corpus, const TokenizerConfig& config);

/// Usage entropy (nats) of one code histogram.
double usage_entropy(std::span<const std::size_t> counts);

/// Samples from an isotropic mixture with `components` means evenly spaced on
/// a circle of `radius`; labels receive component ids when non-null.
std::vector<Point2> gaussian_mixture(std::size_t n, std::size_t components, double radius,
                                     double stddev, std::mt19937_64& rng,
                                     std::vector<std::size_t>* labels = nullptr);

/// Points as rows of an n x 2 matrix.
Matrix to_matrix(std::span<const Point2> points);

}  // namespace dfm
