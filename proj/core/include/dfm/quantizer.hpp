// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "dfm/tensor.hpp"
#include "dfm/types.hpp"

namespace dfm {

/// Multi-codebook quantizer: an E-dim vector is split into M chunks of E/M,
/// each matched against its own table of K_m codes.
class Codebook {
 public:
  explicit Codebook(std::vector<Matrix> sub_codebooks);

  /// Gaussian-initialized codes.
  static Codebook random(std::size_t sub_codebooks, std::size_t codes_per_book,
                         std::size_t embed_dim, std::uint64_t seed, double stddev = 1.0);

  std::size_t num_books() const { return subs_.size(); }
  std::size_t embed_dim() const { return dim_; }
  std::size_t sub_dim() const { return dim_ / subs_.size(); }
  std::size_t book_size(std::size_t m) const { return subs_[m].rows; }
  const Matrix& book(std::size_t m) const { return subs_[m]; }
  Matrix& book(std::size_t m) { return subs_[m]; }

 private:
  std::vector<Matrix> subs_;
  std::size_t dim_ = 0;
};

struct QuantizedCode {
  std::vector<std::size_t> indices;
  std::vector<double> representative;
};

/// Per-chunk Euclidean argmin; ties go to the lowest index.
QuantizedCode quantize(const Codebook& codebook, std::span<const double> z);

/// Concatenation of the selected sub-codes.
std::vector<double> representative_lookup(const Codebook& codebook,
                                          std::span<const std::size_t> indices);

/// projection (H x E) times representative (E).
std::vector<double> project(std::span<const double> representative, const Matrix& projection);

struct VqLosses {
  /// ||sg(z) - c||^2, gradient flows to the code.
  double codebook = 0.0;
  /// ||z - sg(c)||^2, gradient flows to the encoder.
  double commitment = 0.0;
};

VqLosses vq_losses(std::span<const double> z, const QuantizedCode& code);

/// Mean squared distance between each row and its representative.
double quantization_distortion(const Codebook& codebook, const Matrix& points);

struct KMeansResult {
  Matrix centroids;
  std::vector<std::size_t> assignment;
  /// Mean squared distance to the nearest centroid.
  double mse = 0.0;
};

/// Lloyd iterations to convergence. Without `init`, k-means++ seeding.
/// With `init` (rows <= k), those centroids are kept and the rest seeded
/// from data, so distortion never exceeds that of `init`.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::mt19937_64& rng,
                    std::size_t max_iters = 200, const Matrix* init = nullptr);

/// Fits each sub-codebook by k-means on its chunk of `points`. A smaller
/// `warm_start` codebook seeds the tables (distortion is then nonincreasing).
Codebook fit_codebook(const Matrix& points, std::size_t sub_codebooks, std::size_t codes_per_book,
                      std::uint64_t seed, const Codebook* warm_start = nullptr);

/// Flattens (sub-codebook m, index) pairs into a contiguous id range.
class TokenLayout {
 public:
  TokenLayout(TokenId first_id, std::vector<std::size_t> book_sizes);

  TokenId first_id() const { return first_; }
  std::size_t num_books() const { return sizes_.size(); }
  std::size_t total() const { return total_; }
  TokenId token(std::size_t book, std::size_t index) const;
  std::pair<std::size_t, std::size_t> decode(TokenId id) const;
  bool contains(TokenId id) const { return id >= first_ && id < first_ + total_; }
  std::vector<TokenId> tokens(std::span<const std::size_t> indices) const;

  /// One row per flattened id: the sub-code placed at its chunk offset in an
  /// E-dim vector (zeros elsewhere). This is what the denoiser projects.
  Matrix representative_rows(const Codebook& codebook) const;

 private:
  TokenId first_;
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

}  // namespace dfm
