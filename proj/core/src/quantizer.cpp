// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dfm/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dfm/rng.hpp"

namespace dfm {
namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::size_t nearest(const Matrix& table, std::span<const double> x, double* dist = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < table.rows; ++k) {
    const double d = squared_distance(table.row(k), x);
    if (d < best_d) {  // strict: ties keep the lower index
      best_d = d;
      best = k;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

}  // namespace

Codebook::Codebook(std::vector<Matrix> sub_codebooks) : subs_(std::move(sub_codebooks)) {
  if (subs_.empty()) throw DomainError("codebook needs at least one sub-codebook");
  const std::size_t sub = subs_.front().cols;
  for (const auto& m : subs_) {
    if (m.cols != sub || m.rows == 0) throw SizeError("sub-codebooks must share a nonzero width");
    for (double v : m.data) {
      if (!std::isfinite(v)) throw DomainError("codebook entry is not finite");
    }
  }
  dim_ = sub * subs_.size();
}

Codebook Codebook::random(std::size_t sub_codebooks, std::size_t codes_per_book,
                          std::size_t embed_dim, std::uint64_t seed, double stddev) {
  if (sub_codebooks == 0 || embed_dim % sub_codebooks != 0) {
    throw DomainError("embedding dimension must be divisible by the sub-codebook count");
  }
  std::mt19937_64 gen(seed);
  std::vector<Matrix> subs;
  for (std::size_t m = 0; m < sub_codebooks; ++m) {
    Matrix t(codes_per_book, embed_dim / sub_codebooks);
    for (double& v : t.data) v = stddev * standard_normal(gen);
    subs.push_back(std::move(t));
  }
  return Codebook(std::move(subs));
}

QuantizedCode quantize(const Codebook& codebook, std::span<const double> z) {
  if (z.size() != codebook.embed_dim()) throw SizeError("vector dimension differs from codebook");
  const std::size_t sub = codebook.sub_dim();
  QuantizedCode code;
  code.indices.resize(codebook.num_books());
  code.representative.resize(z.size());
  for (std::size_t m = 0; m < codebook.num_books(); ++m) {
    auto chunk = z.subspan(m * sub, sub);
    const std::size_t k = nearest(codebook.book(m), chunk);
    code.indices[m] = k;
    auto row = codebook.book(m).row(k);
    std::copy(row.begin(), row.end(), code.representative.begin() + static_cast<std::ptrdiff_t>(m * sub));
  }
  return code;
}

std::vector<double> representative_lookup(const Codebook& codebook,
                                          std::span<const std::size_t> indices) {
  if (indices.size() != codebook.num_books()) throw SizeError("wrong number of indices");
  const std::size_t sub = codebook.sub_dim();
  std::vector<double> rep(codebook.embed_dim());
  for (std::size_t m = 0; m < indices.size(); ++m) {
    if (indices[m] >= codebook.book_size(m)) throw DomainError("code index out of range");
    auto row = codebook.book(m).row(indices[m]);
    std::copy(row.begin(), row.end(), rep.begin() + static_cast<std::ptrdiff_t>(m * sub));
  }
  return rep;
}

std::vector<double> project(std::span<const double> representative, const Matrix& projection) {
  if (projection.cols != representative.size()) throw SizeError("projection width mismatch");
  std::vector<double> out(projection.rows, 0.0);
  for (std::size_t i = 0; i < projection.rows; ++i) out[i] = dot(projection.row(i), representative);
  return out;
}

VqLosses vq_losses(std::span<const double> z, const QuantizedCode& code) {
  if (z.size() != code.representative.size()) throw SizeError("vector/code dimension mismatch");
  const double d = squared_distance(z, code.representative);
  return {d, d};
}

double quantization_distortion(const Codebook& codebook, const Matrix& points) {
  if (points.rows == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < points.rows; ++i) {
    auto code = quantize(codebook, points.row(i));
    total += squared_distance(points.row(i), code.representative);
  }
  return total / static_cast<double>(points.rows);
}

KMeansResult kmeans(const Matrix& points, std::size_t k, std::mt19937_64& rng,
                    std::size_t max_iters, const Matrix* init) {
  if (points.rows == 0) throw PreconditionError("k-means needs data");
  if (k == 0) throw DomainError("k must be positive");
  const std::size_t n = points.rows;
  const std::size_t dim = points.cols;
  KMeansResult res;
  res.centroids = Matrix(k, dim);
  std::size_t seeded = 0;
  if (init) {
    if (init->cols != dim || init->rows > k) throw SizeError("k-means init has the wrong shape");
    for (std::size_t r = 0; r < init->rows; ++r) {
      std::copy(init->row(r).begin(), init->row(r).end(), res.centroids.row(r).begin());
    }
    seeded = init->rows;
  }
  // k-means++ for the remaining centroids.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  auto refresh = [&](std::size_t c) {
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.row(i), res.centroids.row(c)));
    }
  };
  if (seeded == 0) {
    const auto first = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
    std::copy(points.row(first).begin(), points.row(first).end(), res.centroids.row(0).begin());
    seeded = 1;
  }
  for (std::size_t c = 0; c < seeded; ++c) refresh(c);
  for (std::size_t c = seeded; c < k; ++c) {
    const std::size_t pick = sample_categorical(d2, uniform01(rng));
    std::copy(points.row(pick).begin(), points.row(pick).end(), res.centroids.row(c).begin());
    refresh(c);
  }

  res.assignment.assign(n, 0);
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < max_iters; ++it) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double dist = 0.0;
      res.assignment[i] = nearest(res.centroids, points.row(i), &dist);
      total += dist;
    }
    res.mse = total / static_cast<double>(n);
    if (!(res.mse < prev)) break;
    prev = res.mse;
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = res.assignment[i];
      ++counts[c];
      for (std::size_t j = 0; j < dim; ++j) sums[c * dim + j] += points(i, j);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t j = 0; j < dim; ++j) {
        res.centroids(c, j) = sums[c * dim + j] / static_cast<double>(counts[c]);
      }
    }
  }
  // Final assignment against the final centroids.
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dist = 0.0;
    res.assignment[i] = nearest(res.centroids, points.row(i), &dist);
    total += dist;
  }
  res.mse = total / static_cast<double>(n);
  return res;
}

Codebook fit_codebook(const Matrix& points, std::size_t sub_codebooks, std::size_t codes_per_book,
                      std::uint64_t seed, const Codebook* warm_start) {
  if (sub_codebooks == 0 || points.cols % sub_codebooks != 0) {
    throw DomainError("point dimension must be divisible by the sub-codebook count");
  }
  const std::size_t sub = points.cols / sub_codebooks;
  std::mt19937_64 rng(seed);
  std::vector<Matrix> books;
  for (std::size_t m = 0; m < sub_codebooks; ++m) {
    Matrix chunk(points.rows, sub);
    for (std::size_t i = 0; i < points.rows; ++i) {
      for (std::size_t j = 0; j < sub; ++j) chunk(i, j) = points(i, m * sub + j);
    }
    const Matrix* init = nullptr;
    if (warm_start) {
      if (warm_start->num_books() != sub_codebooks || warm_start->sub_dim() != sub) {
        throw SizeError("warm-start codebook has a different layout");
      }
      init = &warm_start->book(m);
    }
    books.push_back(kmeans(chunk, codes_per_book, rng, 500, init).centroids);
  }
  return Codebook(std::move(books));
}

TokenLayout::TokenLayout(TokenId first_id, std::vector<std::size_t> book_sizes)
    : first_(first_id), sizes_(std::move(book_sizes)) {
  for (auto s : sizes_) {
    offsets_.push_back(total_);
    total_ += s;
  }
}

TokenId TokenLayout::token(std::size_t book, std::size_t index) const {
  if (book >= sizes_.size() || index >= sizes_[book]) throw DomainError("code outside layout");
  return static_cast<TokenId>(first_ + offsets_[book] + index);
}

std::pair<std::size_t, std::size_t> TokenLayout::decode(TokenId id) const {
  if (!contains(id)) throw DomainError("token id outside the signal range");
  std::size_t local = id - first_;
  for (std::size_t m = sizes_.size(); m-- > 0;) {
    if (local >= offsets_[m]) return {m, local - offsets_[m]};
  }
  return {0, local};
}

std::vector<TokenId> TokenLayout::tokens(std::span<const std::size_t> indices) const {
  if (indices.size() != sizes_.size()) throw SizeError("wrong number of indices");
  std::vector<TokenId> out;
  for (std::size_t m = 0; m < indices.size(); ++m) out.push_back(token(m, indices[m]));
  return out;
}

Matrix TokenLayout::representative_rows(const Codebook& codebook) const {
  if (codebook.num_books() != sizes_.size()) throw SizeError("layout/codebook mismatch");
  const std::size_t sub = codebook.sub_dim();
  Matrix rows(total_, codebook.embed_dim());
  for (std::size_t m = 0; m < sizes_.size(); ++m) {
    if (codebook.book_size(m) != sizes_[m]) throw SizeError("layout/codebook size mismatch");
    for (std::size_t k = 0; k < sizes_[m]; ++k) {
      auto src = codebook.book(m).row(k);
      auto dst = rows.row(offsets_[m] + k);
      std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(m * sub));
    }
  }
  return rows;
}

}  // namespace dfm
