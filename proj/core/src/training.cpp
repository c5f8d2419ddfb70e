// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dfm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "dfm/denoiser.hpp"
#include "dfm/rng.hpp"

namespace dfm {
namespace {

void add_weights(TransformerWeights& into, const TransformerWeights& from) { into.axpy(1.0, from); }

void scale_weights(TransformerWeights& w, double s) {
  w.for_each([&](const std::string&, Matrix& m) {
    for (double& v : m.data) v *= s;
  });
}

void check_alignment(const Matrix& logits, const TokenSequence& x1) {
  if (logits.rows != x1.size()) throw SizeError("logits rows differ from sequence length");
  for (TokenId tok : x1.tokens) {
    if (tok >= logits.cols) throw DomainError("target token outside the vocabulary");
  }
}

}  // namespace

double dfm_ce_loss(const Matrix& logits, const TokenSequence& x1) {
  check_alignment(logits, x1);
  const std::size_t r = x1.count(Segment::Response);
  if (r == 0) throw PreconditionError("sequence has no response positions");
  double loss = 0.0;
  for (std::size_t i = 0; i < x1.size(); ++i) {
    if (x1.segments[i] != Segment::Response) continue;
    loss += log_sum_exp(logits.row(i)) - logits(i, x1.tokens[i]);
  }
  return loss / static_cast<double>(r);
}

std::pair<double, Matrix> dfm_ce_loss_with_grad(const Matrix& logits, const TokenSequence& x1) {
  check_alignment(logits, x1);
  const std::size_t r = x1.count(Segment::Response);
  if (r == 0) throw PreconditionError("sequence has no response positions");
  const double inv = 1.0 / static_cast<double>(r);
  Matrix grad(logits.rows, logits.cols);
  double loss = 0.0;
  for (std::size_t i = 0; i < x1.size(); ++i) {
    if (x1.segments[i] != Segment::Response) continue;
    const double lse = log_sum_exp(logits.row(i));
    loss += lse - logits(i, x1.tokens[i]);
    auto g = grad.row(i);
    for (std::size_t v = 0; v < logits.cols; ++v) g[v] = std::exp(logits(i, v) - lse) * inv;
    g[x1.tokens[i]] -= inv;
  }
  return {loss * inv, std::move(grad)};
}

double expected_cross_entropy(const Matrix& logits, const Matrix& target_probs,
                              const TokenSequence& layout) {
  if (logits.rows != layout.size() || target_probs.rows != logits.rows ||
      target_probs.cols != logits.cols) {
    throw SizeError("logits/target/layout shapes differ");
  }
  const std::size_t r = layout.count(Segment::Response);
  if (r == 0) throw PreconditionError("sequence has no response positions");
  double total = 0.0;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout.segments[i] != Segment::Response) continue;
    const double lse = log_sum_exp(logits.row(i));
    for (std::size_t v = 0; v < logits.cols; ++v) {
      const double p = target_probs(i, v);
      if (p > 0.0) total += p * (lse - logits(i, v));
    }
  }
  return total / static_cast<double>(r);
}

BatchPlan plan_batches(std::span<const std::string> manifest, std::size_t batch_size,
                       std::size_t accumulation_steps, std::mt19937_64& rng,
                       std::span<const std::string> modalities) {
  if (batch_size == 0) throw DomainError("batch size must be positive");
  if (accumulation_steps == 0) throw DomainError("accumulation steps must be positive");
  BatchPlan plan;
  plan.accumulation_steps = accumulation_steps;

  std::vector<std::string> order(modalities.begin(), modalities.end());
  if (order.empty()) {
    for (const auto& tag : manifest) {
      if (tag.empty()) throw PlanError("manifest entry without a modality tag");
      if (std::find(order.begin(), order.end(), tag) == order.end()) order.push_back(tag);
    }
  }
  std::map<std::string, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (manifest[i].empty()) throw PlanError("manifest entry without a modality tag");
    buckets[manifest[i]].push_back(i);
  }

  std::vector<std::vector<Batch>> per_modality;
  for (const auto& tag : order) {
    auto it = buckets.find(tag);
    if (it == buckets.end() || it->second.empty()) {
      plan.warnings.push_back("modality '" + tag + "' has no examples; skipped");
      continue;
    }
    auto& idx = it->second;
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<Batch> cut;
    for (std::size_t s = 0; s < idx.size(); s += batch_size) {
      const std::size_t e = std::min(idx.size(), s + batch_size);
      cut.push_back({tag, std::vector<std::size_t>(idx.begin() + static_cast<std::ptrdiff_t>(s),
                                                   idx.begin() + static_cast<std::ptrdiff_t>(e))});
    }
    per_modality.push_back(std::move(cut));
  }
  for (std::size_t round = 0;; ++round) {
    bool any = false;
    for (auto& cut : per_modality) {
      if (round < cut.size()) {
        plan.batches.push_back(std::move(cut[round]));
        any = true;
      }
    }
    if (!any) break;
  }
  return plan;
}

GradNormUpdate gradnorm_update(std::span<const double> weights, std::span<const double> grad_norms,
                               std::span<const double> initial_losses,
                               std::span<const double> current_losses, double alpha,
                               double learning_rate) {
  const std::size_t n = weights.size();
  if (n == 0 || grad_norms.size() != n || initial_losses.size() != n || current_losses.size() != n) {
    throw SizeError("GradNorm inputs must have one entry per task");
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!(weights[k] > 0.0) || !std::isfinite(weights[k])) throw DomainError("loss weights must be positive");
    if (!std::isfinite(grad_norms[k]) || grad_norms[k] < 0.0) throw DomainError("gradient norms must be finite");
  }
  GradNormUpdate out;
  out.weights.assign(weights.begin(), weights.end());
  const double mean_g = std::accumulate(grad_norms.begin(), grad_norms.end(), 0.0) / static_cast<double>(n);
  if (!(mean_g > 0.0)) {
    out.warning = "GradNorm skipped: mean gradient norm is zero";
    return out;
  }
  std::vector<double> ratio(n), weighted(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double l0 = initial_losses[k] > 0.0 ? initial_losses[k] : 1.0;
    ratio[k] = current_losses[k] / l0;
    weighted[k] = weights[k] * grad_norms[k];
  }
  const double mean_r = std::accumulate(ratio.begin(), ratio.end(), 0.0) / static_cast<double>(n);
  const double mean_w = std::accumulate(weighted.begin(), weighted.end(), 0.0) / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double rel = mean_r > 0.0 ? ratio[k] / mean_r : 1.0;
    const double target = mean_w * std::pow(rel, alpha);
    const double diff = weighted[k] - target;
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    out.weights[k] -= learning_rate * sign * grad_norms[k] / mean_g;
    out.weights[k] = std::max(out.weights[k], 1e-6);
  }
  const double sum = std::accumulate(out.weights.begin(), out.weights.end(), 0.0);
  for (double& w : out.weights) w *= static_cast<double>(n) / sum;
  out.updated = true;
  return out;
}

std::vector<std::string> Dataset::manifest() const {
  std::vector<std::string> tags;
  tags.reserve(examples.size());
  for (const auto& e : examples) tags.push_back(e.modality);
  return tags;
}

void to_json(nlohmann::json& j, const GradNormConfig& c) {
  j = {{"enabled", c.enabled},
       {"alpha", c.alpha},
       {"learning_rate", c.learning_rate},
       {"update_every", c.update_every}};
}

void from_json(const nlohmann::json& j, GradNormConfig& c) {
  GradNormConfig d;
  d.enabled = j.value("enabled", d.enabled);
  d.alpha = j.value("alpha", d.alpha);
  d.learning_rate = j.value("learning_rate", d.learning_rate);
  d.update_every = j.value("update_every", d.update_every);
  if (d.update_every == 0) throw ConfigError("gradnorm.update_every must be positive");
  c = d;
}

void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"accumulation_steps", c.accumulation_steps},
       {"steps", c.steps},
       {"cfg_drop_prob", c.cfg_drop_prob},
       {"optimizer", c.optimizer},
       {"lr_schedule", c.lr_schedule},
       {"gradnorm", c.gradnorm},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainingConfig& c) {
  TrainingConfig d;
  d.batch_size = j.value("batch_size", d.batch_size);
  d.accumulation_steps = j.value("accumulation_steps", d.accumulation_steps);
  d.steps = j.value("steps", d.steps);
  d.cfg_drop_prob = j.value("cfg_drop_prob", d.cfg_drop_prob);
  if (j.contains("optimizer")) d.optimizer = j.at("optimizer").get<OptimizerConfig>();
  d.lr_schedule = j.value("lr_schedule", d.lr_schedule);
  if (d.lr_schedule != "constant" && d.lr_schedule != "cosine") {
    throw ConfigError("unknown lr_schedule: " + d.lr_schedule);
  }
  if (j.contains("gradnorm")) d.gradnorm = j.at("gradnorm").get<GradNormConfig>();
  d.seed = j.value("seed", d.seed);
  if (d.batch_size == 0 || d.accumulation_steps == 0) throw ConfigError("batch sizes must be positive");
  if (d.cfg_drop_prob < 0.0 || d.cfg_drop_prob > 1.0) throw ConfigError("cfg_drop_prob must lie in [0, 1]");
  c = d;
}

Trainer::Trainer(TrainableDenoiser& model, PathSchedule schedule, TrainingConfig config)
    : model_(model),
      schedule_(std::move(schedule)),
      config_(config),
      optimizer_(config.optimizer),
      rng_(derive_seed(config.seed, "train")),
      step_sum_(&add_weights) {
  if (schedule_.vocab_size() != model_.vocab_size()) {
    throw SizeError("schedule and model vocabularies differ");
  }
  if (config_.batch_size == 0 || config_.accumulation_steps == 0) {
    throw DomainError("batch sizes must be positive");
  }
}

void Trainer::attach_tokenizer(ToyTokenizer* tokenizer, TokenLayout layout) {
  tokenizer_ = tokenizer;
  layout_ = std::move(layout);
}

TokenSequence Trainer::current_target(const TrainingExample& example) const {
  if (!tokenizer_ || example.signal_points.empty()) return example.target;
  TokenSequence x1 = example.target;
  const std::size_t books = layout_->num_books();
  for (std::size_t n = 0; n < example.signal_points.size(); ++n) {
    const auto code = tokenizer_->tokenize(example.signal_points[n]);
    for (std::size_t m = 0; m < books; ++m) {
      const std::size_t pos = example.signal_offset + n * books + m;
      if (pos >= x1.size()) throw SizeError("signal codes overrun the sequence");
      x1.tokens[pos] = layout_->token(m, code.indices[m]);
    }
  }
  return x1;
}

PreparedExample Trainer::prepare(const TrainingExample& example) {
  PreparedExample p;
  p.x1 = current_target(example);
  p.t = uniform01(rng_);
  p.x_t = sample_conditional(schedule_, p.x1, p.t, rng_, CorruptionScope::ResponseOnly);
  p.condition_dropped = uniform01(rng_) < config_.cfg_drop_prob;
  ++examples_seen_;
  if (p.condition_dropped) ++dropped_;
  return p;
}

LossBreakdown Trainer::training_step(const Dataset& data, const Batch& batch) {
  if (batch.indices.empty()) throw PreconditionError("empty batch");
  bool signal = false;
  for (auto i : batch.indices) {
    if (i >= data.examples.size()) throw PlanError("batch index outside the dataset");
    const auto& ex = data.examples[i];
    if (ex.modality != batch.modality) {
      throw PlanError("batch mixes modalities '" + batch.modality + "' and '" + ex.modality + "'");
    }
    signal = signal || !ex.signal_points.empty();
  }
  const bool joint = signal && tokenizer_ != nullptr;
  if (joint) model_.set_signal_codebook(layout_->representative_rows(tokenizer_->codebook()));

  LossBreakdown out;
  out.modality = batch.modality;
  out.coefficients = coefficients_;
  out.examples = batch.indices.size();

  const double inv_b = 1.0 / static_cast<double>(batch.indices.size());
  Accumulator micro(&add_weights);
  ForwardRecord record;
  for (auto i : batch.indices) {
    const auto prep = prepare(data.examples[i]);
    if (prep.condition_dropped) ++out.dropped_conditions;
    const auto result = model_.forward(prep.x_t, prep.t, prep.condition_dropped, &record);
    auto [loss, dlogits] = dfm_ce_loss_with_grad(result.logits, prep.x1);
    out.l_ce += loss * inv_b;
    for (double& v : dlogits.data) v *= inv_b;
    TransformerWeights leaf = model_.weights().zeros_like();
    model_.backward(record, dlogits, leaf);
    micro.push(std::move(leaf));
  }
  TransformerWeights grad = *micro.collapse();
  out.grad_norms[0] = std::sqrt(grad.squared_norm());

  if (joint) {
    std::vector<Point2> points;
    for (auto i : batch.indices) {
      const auto& pts = data.examples[i].signal_points;
      points.insert(points.end(), pts.begin(), pts.end());
    }
    TokenizerGradients grec, gcommit;
    const auto tok = tokenizer_->gradients(points, grec, gcommit);
    out.l_rec_sig = tok.reconstruction;
    out.l_rec_aux = tok.commitment;
    out.grad_norms[1] = tok.reconstruction_grad_norm;
    out.grad_norms[2] = tok.commitment_grad_norm;
    tokenizer_->train_step(points, coefficients_[1], coefficients_[2]);

    if (config_.gradnorm.enabled) {
      const std::array<double, 3> losses{out.l_ce, out.l_rec_sig, out.l_rec_aux};
      if (!initial_losses_) initial_losses_ = losses;
      if (gradnorm_eligible_++ % config_.gradnorm.update_every == 0) {
        auto upd = gradnorm_update(coefficients_, out.grad_norms, *initial_losses_, losses,
                                   config_.gradnorm.alpha, config_.gradnorm.learning_rate);
        if (!upd.warning.empty()) warnings_.push_back(upd.warning);
        std::copy(upd.weights.begin(), upd.weights.end(), coefficients_.begin());
      }
    }
  }
  out.l_overall = out.recompose();

  scale_weights(grad, out.coefficients[0] / static_cast<double>(config_.accumulation_steps));
  step_sum_.push(std::move(grad));
  if (++micro_batches_ % config_.accumulation_steps == 0) {
    apply_update();
    out.applied = true;
  }
  return out;
}

void Trainer::apply_update() {
  auto total = step_sum_.collapse();
  if (!total) return;
  std::vector<Matrix*> params;
  std::vector<const Matrix*> grads;
  model_.weights().for_each([&](const std::string&, Matrix& m) { params.push_back(&m); });
  total->for_each([&](const std::string&, Matrix& m) { grads.push_back(&m); });
  if (config_.lr_schedule == "cosine" && config_.steps > 0) {
    const double progress = static_cast<double>(optimizer_.steps()) / static_cast<double>(config_.steps);
    optimizer_.set_learning_rate(config_.optimizer.learning_rate * 0.5 *
                                 (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0))));
  }
  optimizer_.step(params, grads);
}

std::vector<LossBreakdown> Trainer::fit(const Dataset& data, std::ostream* csv) {
  if (data.examples.empty()) throw PreconditionError("empty training set");
  std::vector<LossBreakdown> log;
  if (csv) write_loss_csv_header(*csv);
  std::size_t row = 0;
  const auto manifest = data.manifest();
  while (optimizer_.steps() < config_.steps) {
    auto plan = plan_batches(manifest, config_.batch_size, config_.accumulation_steps, rng_);
    warnings_.insert(warnings_.end(), plan.warnings.begin(), plan.warnings.end());
    for (const auto& b : plan.batches) {
      auto lb = training_step(data, b);
      if (csv) write_loss_csv_row(*csv, row, lb);
      ++row;
      log.push_back(std::move(lb));
      if (optimizer_.steps() >= config_.steps) break;
    }
  }
  return log;
}

void write_loss_csv_header(std::ostream& os) {
  os << "step,modality,l_ce,l_rec_sig,l_rec_aux,l_overall,lambda1,lambda2,lambda3,"
        "grad_norm_ce,grad_norm_rec_sig,grad_norm_rec_aux\n";
}

void write_loss_csv_row(std::ostream& os, std::size_t step, const LossBreakdown& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                step, r.modality.c_str(), r.l_ce, r.l_rec_sig, r.l_rec_aux, r.l_overall,
                r.coefficients[0], r.coefficients[1], r.coefficients[2], r.grad_norms[0],
                r.grad_norms[1], r.grad_norms[2]);
  os << buf;
}

OracleComparison compare_to_oracle(const TrainableDenoiser& model, const SequenceDistribution& q,
                                   const TokenSequence& layout, const PathSchedule& schedule,
                                   std::size_t draws, std::uint64_t seed) {
  if (q.length != layout.size()) throw SizeError("layout length differs from q");
  std::mt19937_64 rng(seed);
  OracleComparison cmp;
  cmp.draws = draws;
  for (std::size_t d = 0; d < draws; ++d) {
    const std::size_t k = sample_categorical(q.probs, uniform01(rng));
    TokenSequence x1(q.support[k], layout.segments);
    const double t = uniform01(rng);
    const auto x_t = sample_conditional(schedule, x1, t, rng, CorruptionScope::ResponseOnly);
    const auto out = model.forward(x_t, t, false);
    const auto post = oracle_posterior(q, schedule, x_t, t);
    Matrix probs(post.logits.rows, post.logits.cols);
    for (std::size_t i = 0; i < probs.rows; ++i) {
      const auto p = post.probabilities(i);
      std::copy(p.begin(), p.end(), probs.row(i).begin());
    }
    cmp.sampled_ce += dfm_ce_loss(out.logits, x1);
    cmp.cross_entropy += expected_cross_entropy(out.logits, probs, layout);
    cmp.oracle_entropy += expected_cross_entropy(post.logits, probs, layout);
  }
  if (draws > 0) {
    const double inv = 1.0 / static_cast<double>(draws);
    cmp.sampled_ce *= inv;
    cmp.cross_entropy *= inv;
    cmp.oracle_entropy *= inv;
  }
  return cmp;
}

}  // namespace dfm
