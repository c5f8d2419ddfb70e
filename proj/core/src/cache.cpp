// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dfm/cache.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "kernels.hpp"

namespace dfm {
namespace {

/// Slots frozen after initialization: BOS and instruction tokens.
bool is_prefix_slot(const std::vector<Segment>& layout, std::size_t slot) {
  return slot == 0 || layout[slot - 1] == Segment::Instruction;
}

struct Shapes {
  std::size_t d, slots, h, f, heads, k;
};

Shapes shapes_of(const TrainableDenoiser& model, const TokenSequence& x_t) {
  const auto& a = model.arch();
  if (x_t.size() > a.max_length) throw SizeError("sequence longer than the model maximum");
  if (x_t.segments.size() != x_t.size()) throw SizeError("token/segment length mismatch");
  return {x_t.size(), x_t.size() + 1, a.width, a.mlp_width(), a.heads, a.vocab_size};
}

TokenId slot_token(const TrainableDenoiser& model, const TokenSequence& x_t, std::size_t s,
                   bool dropped) {
  if (s == 0) return 0;
  const TokenId tok = model.input_token(x_t, s - 1, dropped);
  if (tok >= model.arch().vocab_size) throw DomainError("token outside model vocabulary");
  return tok;
}

}  // namespace

void to_json(nlohmann::json& j, const CacheConfig& c) {
  j = {{"tau", c.tau},
       {"similarity_layer", c.similarity_layer},
       {"refresh_interval", c.refresh_interval},
       {"audit", c.audit}};
}

void from_json(const nlohmann::json& j, CacheConfig& c) {
  CacheConfig d;
  d.tau = j.value("tau", d.tau);
  d.similarity_layer = j.value("similarity_layer", d.similarity_layer);
  d.refresh_interval = j.value("refresh_interval", d.refresh_interval);
  d.audit = j.value("audit", d.audit);
  if (d.tau < 0.0) throw ConfigError("cache tau must be nonnegative");
  if (d.similarity_layer != 0) throw ConfigError("only similarity_layer 0 is supported");
  c = d;
}

bool CacheState::matches(const TokenSequence& x_t) const {
  return initialized && layout == x_t.segments;
}

DenoiserOutput initialize_cache(const TrainableDenoiser& model, const TokenSequence& x_t, double t,
                                bool condition_dropped, CacheState& cache) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("time outside [0,1]");
  const auto sh = shapes_of(model, x_t);
  const auto& w = model.weights();
  const std::size_t layers = model.arch().layers;

  cache.layout = x_t.segments;
  cache.slot_tokens.assign(sh.slots, 0);
  cache.keys.assign(layers, Matrix(sh.slots, sh.h));
  cache.values.assign(layers, Matrix(sh.slots, sh.h));
  cache.last_refresh.assign(sh.slots, cache.calls);

  const auto te = model.time_embedding(t);
  Matrix hin(sh.slots, sh.h), hout(sh.slots, sh.h);
  for (std::size_t s = 0; s < sh.slots; ++s) {
    cache.slot_tokens[s] = slot_token(model, x_t, s, condition_dropped);
    model.embed_slot(s, cache.slot_tokens[s], te, hin.row(s));
  }
  detail::SlotScratch scratch(sh.h, sh.f, sh.heads, sh.slots);
  std::vector<detail::SlotScratch> q_scratch(sh.slots, detail::SlotScratch(sh.h, sh.f, sh.heads, sh.slots));
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& lw = w.layers[l];
    for (std::size_t s = 0; s < sh.slots; ++s) {
      auto b = q_scratch[s].view();
      detail::layer_project(lw, hin.row(s), b);
      std::copy(b.k.begin(), b.k.end(), cache.keys[l].row(s).begin());
      std::copy(b.v.begin(), b.v.end(), cache.values[l].row(s).begin());
    }
    for (std::size_t s = 0; s < sh.slots; ++s) {
      auto b = q_scratch[s].view();
      detail::layer_finish(lw, sh.heads, hin.row(s), cache.keys[l], cache.values[l], b, hout.row(s));
    }
    std::swap(hin, hout);
  }
  DenoiserOutput out;
  out.logits = Matrix(sh.d, sh.k);
  std::vector<double> xhat(sh.h), normed(sh.h);
  double rstd = 0.0;
  for (std::size_t i = 0; i < sh.d; ++i) {
    detail::head_row(w, hin.row(i), xhat, normed, out.logits.row(i), &rstd);
  }
  cache.logits = out.logits;
  for (std::size_t s = 0; s < sh.slots; ++s) {
    if (!is_prefix_slot(cache.layout, s)) ++cache.counters.recomputed;
  }
  cache.initialized = true;
  ++cache.calls;
  return out;
}

DenoiserOutput cached_forward(const TrainableDenoiser& model, const TokenSequence& x_t, double t,
                              bool condition_dropped, CacheState& cache, const CacheConfig& config,
                              std::vector<CacheAuditEntry>* audit) {
  if (!cache.initialized) throw PreconditionError("cache used before initialization");
  if (!cache.matches(x_t)) throw PreconditionError("cache layout differs from the sequence");
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("time outside [0,1]");
  if (config.similarity_layer != 0) throw ConfigError("only similarity_layer 0 is supported");

  const bool periodic = config.refresh_interval > 0 && cache.calls % config.refresh_interval == 0;
  if (config.forced_recompute() || periodic) {
    const auto before = cache.counters;
    const auto calls = cache.calls;
    auto out = initialize_cache(model, x_t, t, condition_dropped, cache);
    cache.counters = before;
    cache.calls = calls + 1;
    for (std::size_t s = 0; s < cache.slots(); ++s) {
      if (!is_prefix_slot(cache.layout, s)) ++cache.counters.recomputed;
    }
    return out;
  }

  const auto sh = shapes_of(model, x_t);
  const auto& w = model.weights();
  const std::size_t layers = model.arch().layers;
  const auto te = model.time_embedding(t);

  // Gate every non-prefix slot on its first-layer value feature.
  std::vector<std::size_t> refresh;
  std::vector<std::vector<double>> inputs;
  std::vector<double> emb(sh.h), xhat(sh.h), ln(sh.h), v(sh.h);
  for (std::size_t s = 0; s < sh.slots; ++s) {
    if (is_prefix_slot(cache.layout, s)) continue;
    const TokenId tok = slot_token(model, x_t, s, condition_dropped);
    model.embed_slot(s, tok, te, emb);
    detail::layer_value(w.layers[0], emb, xhat, ln, v);
    const double sim = std::max(cosine_similarity(v, cache.values[0].row(s)), 0.0);
    const bool reuse = sim >= config.tau;
    if (audit) {
      audit->push_back({cache.calls, s, tok != cache.slot_tokens[s], sim, reuse});
    }
    if (reuse) {
      ++cache.counters.reused;
      continue;
    }
    ++cache.counters.recomputed;
    refresh.push_back(s);
    inputs.emplace_back(emb);
    cache.slot_tokens[s] = tok;
    cache.last_refresh[s] = cache.calls;
  }

  std::vector<detail::SlotScratch> scratch;
  scratch.reserve(refresh.size());
  for (std::size_t r = 0; r < refresh.size(); ++r) scratch.emplace_back(sh.h, sh.f, sh.heads, sh.slots);
  std::vector<std::vector<double>> outputs(refresh.size(), std::vector<double>(sh.h));
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& lw = w.layers[l];
    for (std::size_t r = 0; r < refresh.size(); ++r) {
      auto b = scratch[r].view();
      detail::layer_project(lw, inputs[r], b);
      std::copy(b.k.begin(), b.k.end(), cache.keys[l].row(refresh[r]).begin());
      std::copy(b.v.begin(), b.v.end(), cache.values[l].row(refresh[r]).begin());
    }
    for (std::size_t r = 0; r < refresh.size(); ++r) {
      auto b = scratch[r].view();
      detail::layer_finish(lw, sh.heads, inputs[r], cache.keys[l], cache.values[l], b, outputs[r]);
    }
    std::swap(inputs, outputs);
  }
  std::vector<double> normed(sh.h);
  double rstd = 0.0;
  for (std::size_t r = 0; r < refresh.size(); ++r) {
    const std::size_t s = refresh[r];
    if (s < sh.d) detail::head_row(w, inputs[r], xhat, normed, cache.logits.row(s), &rstd);
  }
  ++cache.calls;
  DenoiserOutput out;
  out.logits = cache.logits;
  return out;
}

CachedDenoiser::CachedDenoiser(const TrainableDenoiser& model, CacheConfig config)
    : model_(model), config_(config) {
  if (config_.similarity_layer != 0) throw ConfigError("only similarity_layer 0 is supported");
}

DenoiserOutput CachedDenoiser::predict(const TokenSequence& x_t, double t, bool condition_dropped) {
  CacheState& cache = caches_[condition_dropped ? 1 : 0];
  if (!cache.matches(x_t)) return initialize_cache(model_, x_t, t, condition_dropped, cache);
  return cached_forward(model_, x_t, t, condition_dropped, cache, config_,
                        config_.audit ? &audit_ : nullptr);
}

void CachedDenoiser::begin_generation() {
  caches_[0] = CacheState{};
  caches_[1] = CacheState{};
  audit_.clear();
}

CacheCounters CachedDenoiser::cache_counters() const {
  CacheCounters c;
  for (const auto& s : caches_) {
    c.recomputed += s.counters.recomputed;
    c.reused += s.counters.reused;
  }
  return c;
}

void to_json(nlohmann::json& j, const SpeedupReport& r) {
  j = {{"uncached_ms", r.uncached_ms},
       {"cached_ms", r.cached_ms},
       {"ratio", r.ratio},
       {"recompute_fraction", r.recompute_fraction},
       {"per_step_recompute_fraction", r.per_step_recompute_fraction},
       {"reference_ratio", r.reference_ratio}};
  if (r.tv_drift) j["tv_drift"] = *r.tv_drift;
}

SpeedupReport speedup_report(const GenerationTrace& uncached, const GenerationTrace& cached,
                             std::optional<double> tv_drift) {
  if (uncached.steps.size() != cached.steps.size()) {
    throw ComparisonError("traces have different step counts");
  }
  for (std::size_t i = 0; i < cached.steps.size(); ++i) {
    if (uncached.steps[i].t != cached.steps[i].t) throw ComparisonError("traces use different time grids");
  }
  SpeedupReport r;
  r.uncached_ms = uncached.total_ms();
  r.cached_ms = cached.total_ms();
  if (r.cached_ms > 0.0) {
    r.ratio = r.uncached_ms / r.cached_ms;
  } else {
    r.ratio = r.uncached_ms > 0.0 ? INFINITY : 1.0;
  }
  r.recompute_fraction = cached.cache_totals().recompute_fraction();
  for (const auto& s : cached.steps) r.per_step_recompute_fraction.push_back(s.cache.recompute_fraction());
  r.tv_drift = tv_drift;
  return r;
}

}  // namespace dfm
