// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dfm/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dfm/rng.hpp"

namespace dfm {
namespace {

double squared_norm(const Mlp& g) {
  double s = 0.0;
  for (const Matrix* m : g.tensors()) {
    for (double v : m->data) s += v * v;
  }
  return s;
}

std::vector<double> as_vector(Point2 p) { return {p.x, p.y}; }

}  // namespace

void to_json(nlohmann::json& j, const TokenizerConfig& c) {
  j = {{"hidden", c.hidden},
       {"embed_dim", c.embed_dim},
       {"sub_codebooks", c.sub_codebooks},
       {"codes_per_book", c.codes_per_book},
       {"commitment_weight", c.commitment_weight},
       {"ema_decay", c.ema_decay},
       {"dead_code_steps", c.dead_code_steps},
       {"steps", c.steps},
       {"batch_size", c.batch_size},
       {"optimizer", c.optimizer},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TokenizerConfig& c) {
  TokenizerConfig d;
  d.hidden = j.value("hidden", d.hidden);
  d.embed_dim = j.value("embed_dim", d.embed_dim);
  d.sub_codebooks = j.value("sub_codebooks", d.sub_codebooks);
  d.codes_per_book = j.value("codes_per_book", d.codes_per_book);
  d.commitment_weight = j.value("commitment_weight", d.commitment_weight);
  d.ema_decay = j.value("ema_decay", d.ema_decay);
  d.dead_code_steps = j.value("dead_code_steps", d.dead_code_steps);
  d.steps = j.value("steps", d.steps);
  d.batch_size = j.value("batch_size", d.batch_size);
  if (j.contains("optimizer")) d.optimizer = j.at("optimizer").get<OptimizerConfig>();
  d.seed = j.value("seed", d.seed);
  c = d;
}

ToyTokenizer::ToyTokenizer(TokenizerConfig config)
    : config_(config),
      codebook_(Codebook::random(config.sub_codebooks == 0 ? 1 : config.sub_codebooks,
                                 config.codes_per_book == 0 ? 1 : config.codes_per_book,
                                 config.embed_dim, config.seed, 0.1)),
      optimizer_(config.optimizer),
      rng_(config.seed) {
  if (config_.sub_codebooks == 0 || config_.codes_per_book == 0 || config_.hidden == 0) {
    throw DomainError("tokenizer sizes must be positive");
  }
  if (config_.ema_decay < 0.0 || config_.ema_decay >= 1.0) {
    throw DomainError("EMA decay must lie in [0, 1)");
  }
  std::mt19937_64 init(derive_seed(config_.seed, "tokenizer-init"));
  encoder_ = Mlp(2, config_.hidden, config_.embed_dim, init);
  decoder_ = Mlp(config_.embed_dim, config_.hidden, 2, init);
  const std::size_t books = config_.sub_codebooks;
  ema_count_.assign(books, std::vector<double>(config_.codes_per_book, 1.0));
  last_used_.assign(books, std::vector<std::size_t>(config_.codes_per_book, 0));
  for (std::size_t m = 0; m < books; ++m) ema_sum_.push_back(codebook_.book(m));
}

void ToyTokenizer::set_codebook(Codebook codebook) {
  if (codebook.num_books() != config_.sub_codebooks || codebook.embed_dim() != config_.embed_dim) {
    throw SizeError("codebook layout differs from the tokenizer config");
  }
  for (std::size_t m = 0; m < codebook.num_books(); ++m) {
    if (codebook.book_size(m) != config_.codes_per_book) throw SizeError("codebook size mismatch");
  }
  codebook_ = std::move(codebook);
  for (std::size_t m = 0; m < codebook_.num_books(); ++m) {
    ema_sum_[m] = codebook_.book(m);
    std::fill(ema_count_[m].begin(), ema_count_[m].end(), 1.0);
  }
}

void ToyTokenizer::initialize_codebook(std::span<const Point2> corpus) {
  if (corpus.empty()) throw PreconditionError("tokenizer corpus is empty");
  const std::size_t sub = codebook_.sub_dim();
  for (std::size_t m = 0; m < codebook_.num_books(); ++m) {
    for (std::size_t k = 0; k < config_.codes_per_book; ++k) {
      const auto pick = static_cast<std::size_t>(uniform01(rng_) * static_cast<double>(corpus.size()));
      const auto z = encode(corpus[std::min(pick, corpus.size() - 1)]);
      for (std::size_t j = 0; j < sub; ++j) {
        codebook_.book(m)(k, j) = z[m * sub + j] + 1e-3 * standard_normal(rng_);
      }
    }
    ema_sum_[m] = codebook_.book(m);
    std::fill(ema_count_[m].begin(), ema_count_[m].end(), 1.0);
  }
}

std::vector<double> ToyTokenizer::encode(Point2 p) const {
  std::vector<double> act;
  const auto x = as_vector(p);
  return encoder_.forward(x, act);
}

QuantizedCode ToyTokenizer::tokenize(Point2 p) const { return quantize(codebook_, encode(p)); }

Point2 ToyTokenizer::decode(std::span<const double> representative) const {
  std::vector<double> act;
  const auto y = decoder_.forward(representative, act);
  return {y[0], y[1]};
}

Point2 ToyTokenizer::reconstruct(Point2 p) const { return decode(tokenize(p).representative); }

double ToyTokenizer::reconstruction_mse(std::span<const Point2> points) const {
  if (points.empty()) return 0.0;
  double total = 0.0;
  for (const Point2& p : points) {
    const Point2 r = reconstruct(p);
    total += (r.x - p.x) * (r.x - p.x) + (r.y - p.y) * (r.y - p.y);
  }
  return total / static_cast<double>(points.size());
}

TokenizerStepResult ToyTokenizer::gradients(std::span<const Point2> points,
                                            TokenizerGradients& rec,
                                            TokenizerGradients& commit) const {
  if (points.empty()) throw PreconditionError("empty tokenizer batch");
  rec = {encoder_.zeros_like(), decoder_.zeros_like()};
  commit = {encoder_.zeros_like(), decoder_.zeros_like()};
  const double inv_n = 1.0 / static_cast<double>(points.size());
  TokenizerStepResult res;
  std::vector<double> enc_act, dec_act;
  for (const Point2& p : points) {
    const auto x = as_vector(p);
    const auto z = encoder_.forward(x, enc_act);
    const auto code = quantize(codebook_, z);
    const auto y = decoder_.forward(code.representative, dec_act);
    std::vector<double> dy(2);
    for (std::size_t i = 0; i < 2; ++i) {
      const double e = y[i] - x[i];
      res.reconstruction += e * e * inv_n;
      dy[i] = 2.0 * e * inv_n;
    }
    // Straight-through: d/dz := d/d(representative).
    const auto dz = decoder_.backward(code.representative, dec_act, dy, rec.decoder);
    encoder_.backward(x, enc_act, dz, rec.encoder);

    std::vector<double> dc(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double e = z[i] - code.representative[i];
      res.commitment += e * e * inv_n;
      dc[i] = 2.0 * e * inv_n;
    }
    encoder_.backward(x, enc_act, dc, commit.encoder);
  }
  res.reconstruction_grad_norm = std::sqrt(squared_norm(rec.encoder) + squared_norm(rec.decoder));
  res.commitment_grad_norm = std::sqrt(squared_norm(commit.encoder) + squared_norm(commit.decoder));
  return res;
}

std::vector<std::vector<double>> ToyTokenizer::quantization_offsets(
    std::span<const Point2> points) const {
  std::vector<std::vector<double>> out;
  for (const Point2& p : points) {
    auto z = encode(p);
    const auto code = quantize(codebook_, z);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = code.representative[i] - z[i];
    out.push_back(std::move(z));
  }
  return out;
}

double ToyTokenizer::surrogate_reconstruction(
    std::span<const Point2> points, const std::vector<std::vector<double>>& offsets) const {
  if (offsets.size() != points.size()) throw SizeError("one offset per point required");
  double total = 0.0;
  std::vector<double> act;
  for (std::size_t n = 0; n < points.size(); ++n) {
    const auto x = as_vector(points[n]);
    auto z = encoder_.forward(x, act);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += offsets[n][i];
    const auto y = decoder_.forward(z, act);
    for (std::size_t i = 0; i < 2; ++i) total += (y[i] - x[i]) * (y[i] - x[i]);
  }
  return total / static_cast<double>(points.size());
}

TokenizerStepResult ToyTokenizer::train_step(std::span<const Point2> batch, double w_rec,
                                             double w_commit) {
  TokenizerGradients rec, commit;
  auto res = gradients(batch, rec, commit);
  if (!std::isfinite(res.reconstruction) || !std::isfinite(res.commitment)) {
    std::ostringstream os;
    os << "tokenizer training diverged at step " << step_ << ": reconstruction="
       << res.reconstruction << " commitment=" << res.commitment;
    throw DomainError(os.str());
  }
  const double wc = w_commit * config_.commitment_weight;
  Mlp genc = rec.encoder;
  Mlp gdec = rec.decoder;
  auto ge = genc.tensors();
  auto ce = commit.encoder.tensors();
  for (std::size_t t = 0; t < ge.size(); ++t) {
    for (std::size_t k = 0; k < ge[t]->data.size(); ++k) {
      ge[t]->data[k] = w_rec * ge[t]->data[k] + wc * ce[t]->data[k];
    }
  }
  for (Matrix* m : gdec.tensors()) {
    for (double& v : m->data) v *= w_rec;
  }

  std::vector<std::vector<double>> latents;
  latents.reserve(batch.size());
  for (const Point2& p : batch) latents.push_back(encode(p));

  std::vector<Matrix*> params = encoder_.tensors();
  for (Matrix* m : decoder_.tensors()) params.push_back(m);
  std::vector<const Matrix*> grads;
  for (Matrix* m : genc.tensors()) grads.push_back(m);
  for (Matrix* m : gdec.tensors()) grads.push_back(m);
  optimizer_.step(params, grads);

  ++step_;
  ema_update(latents);
  return res;
}

void ToyTokenizer::ema_update(const std::vector<std::vector<double>>& latents) {
  const double g = config_.ema_decay;
  const std::size_t sub = codebook_.sub_dim();
  const std::size_t kcodes = config_.codes_per_book;
  for (std::size_t m = 0; m < codebook_.num_books(); ++m) {
    Matrix& book = codebook_.book(m);
    std::vector<double> counts(kcodes, 0.0);
    Matrix sums(kcodes, sub);
    for (const auto& z : latents) {
      std::span<const double> chunk(z.data() + m * sub, sub);
      // Nearest code under the current table (ties to the lower index).
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < kcodes; ++k) {
        double d = 0.0;
        for (std::size_t j = 0; j < sub; ++j) d += (chunk[j] - book(k, j)) * (chunk[j] - book(k, j));
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      counts[best] += 1.0;
      for (std::size_t j = 0; j < sub; ++j) sums(best, j) += chunk[j];
    }
    double total = 0.0;
    for (std::size_t k = 0; k < kcodes; ++k) {
      ema_count_[m][k] = g * ema_count_[m][k] + (1.0 - g) * counts[k];
      for (std::size_t j = 0; j < sub; ++j) {
        ema_sum_[m](k, j) = g * ema_sum_[m](k, j) + (1.0 - g) * sums(k, j);
      }
      total += ema_count_[m][k];
      if (counts[k] > 0.0) last_used_[m][k] = step_;
    }
    // Laplace-smoothed counts keep rarely used codes finite.
    constexpr double kEps = 1e-5;
    for (std::size_t k = 0; k < kcodes; ++k) {
      const double n = (ema_count_[m][k] + kEps) / (total + kcodes * kEps) * total;
      for (std::size_t j = 0; j < sub; ++j) book(k, j) = ema_sum_[m](k, j) / n;
    }
    for (std::size_t k = 0; k < kcodes; ++k) {
      if (step_ - last_used_[m][k] < config_.dead_code_steps || latents.empty()) continue;
      const auto pick = static_cast<std::size_t>(uniform01(rng_) * static_cast<double>(latents.size()));
      const auto& z = latents[std::min(pick, latents.size() - 1)];
      for (std::size_t j = 0; j < sub; ++j) {
        book(k, j) = z[m * sub + j];
        ema_sum_[m](k, j) = book(k, j);
      }
      ema_count_[m][k] = 1.0;
      last_used_[m][k] = step_;
    }
  }
}

std::vector<std::vector<std::size_t>> ToyTokenizer::usage(std::span<const Point2> points) const {
  std::vector<std::vector<std::size_t>> hist(codebook_.num_books(),
                                             std::vector<std::size_t>(config_.codes_per_book, 0));
  for (const Point2& p : points) {
    const auto code = tokenize(p);
    for (std::size_t m = 0; m < code.indices.size(); ++m) ++hist[m][code.indices[m]];
  }
  return hist;
}

ToyTokenizer fit_toy_modality(std::span<const Point2> corpus, const TokenizerConfig& config) {
  if (corpus.empty()) throw PreconditionError("tokenizer corpus is empty");
  ToyTokenizer tok(config);
  tok.initialize_codebook(corpus);
  std::mt19937_64 rng(derive_seed(config.seed, "tokenizer-batches"));
  const std::size_t bs = std::max<std::size_t>(1, std::min(config.batch_size, corpus.size()));
  std::vector<Point2> batch(bs);
  for (std::size_t s = 0; s < config.steps; ++s) {
    for (auto& p : batch) {
      const auto i = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(corpus.size()));
      p = corpus[std::min(i, corpus.size() - 1)];
    }
    tok.train_step(batch);
  }
  return tok;
}

double usage_entropy(std::span<const std::size_t> counts) {
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  return h;
}

std::vector<Point2> gaussian_mixture(std::size_t n, std::size_t components, double radius,
                                     double stddev, std::mt19937_64& rng,
                                     std::vector<std::size_t>* labels) {
  if (components == 0) throw DomainError("mixture needs at least one component");
  std::vector<Point2> out;
  out.reserve(n);
  if (labels) labels->clear();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % components;
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(components);
    const double mx = components == 1 ? 0.0 : radius * std::cos(angle);
    const double my = components == 1 ? 0.0 : radius * std::sin(angle);
    out.push_back({mx + stddev * standard_normal(rng), my + stddev * standard_normal(rng)});
    if (labels) labels->push_back(c);
  }
  return out;
}

Matrix to_matrix(std::span<const Point2> points) {
  Matrix m(points.size(), 2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    m(i, 0) = points[i].x;
    m(i, 1) = points[i].y;
  }
  return m;
}

}  // namespace dfm
