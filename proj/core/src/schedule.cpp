// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dfm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

#include "dfm/rng.hpp"

namespace dfm {
namespace {

void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("time " + std::to_string(t) + " outside [0,1]");
}

void check_token(const PathSchedule& s, TokenId x) {
  if (x >= s.vocab_size()) throw DomainError("token outside schedule vocabulary");
}

}  // namespace

PathSchedule PathSchedule::mixture(std::size_t vocab_size, KappaKind kappa) {
  if (vocab_size < 2) throw DomainError("vocabulary needs at least two tokens");
  return mixture(std::vector<double>(vocab_size, 1.0 / static_cast<double>(vocab_size)), kappa);
}

PathSchedule PathSchedule::mixture(std::vector<double> base, KappaKind kappa) {
  if (base.size() < 2) throw DomainError("vocabulary needs at least two tokens");
  double total = 0.0;
  for (double p : base) {
    if (!(p >= 0.0)) throw DomainError("base distribution has a negative entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("base distribution does not sum to 1");
  PathSchedule s;
  s.kind_ = PathKind::Mixture;
  s.vocab_size_ = base.size();
  s.kappa_ = kappa;
  s.base_ = std::move(base);
  return s;
}

PathSchedule PathSchedule::masked(std::size_t vocab_size, TokenId mask_id, KappaKind kappa) {
  if (mask_id >= vocab_size) throw DomainError("mask id outside vocabulary");
  std::vector<double> base(vocab_size, 0.0);
  base[mask_id] = 1.0;
  return mixture(std::move(base), kappa);
}

PathSchedule PathSchedule::metric(std::vector<double> distances, std::size_t vocab_size, double c,
                                  double a) {
  if (vocab_size < 2) throw DomainError("vocabulary needs at least two tokens");
  if (distances.size() != vocab_size * vocab_size) throw SizeError("distance matrix must be K x K");
  if (!(c > 0.0) || !(a > 0.0)) throw DomainError("metric schedule needs c > 0 and a > 0");
  for (std::size_t i = 0; i < vocab_size; ++i) {
    if (distances[i * vocab_size + i] != 0.0) throw DomainError("distance diagonal must be zero");
    for (std::size_t j = 0; j < vocab_size; ++j) {
      double d = distances[i * vocab_size + j];
      if (!(d >= 0.0 && d <= 2.0)) throw DomainError("distances must lie in [0, 2]");
      if (d != distances[j * vocab_size + i]) throw DomainError("distance matrix not symmetric");
    }
  }
  PathSchedule s;
  s.kind_ = PathKind::Metric;
  s.vocab_size_ = vocab_size;
  s.c_ = c;
  s.a_ = a;
  s.distances_ = std::move(distances);
  // Metric paths start from softmax(0) = uniform.
  s.base_.assign(vocab_size, 1.0 / static_cast<double>(vocab_size));
  return s;
}

PathSchedule PathSchedule::metric(const Vocabulary& vocab, double c, double a) {
  return metric(vocab.cosine_distances(), vocab.size(), c, a);
}

double kappa_at(const PathSchedule& schedule, double t) {
  if (schedule.kind() != PathKind::Mixture) {
    throw UnsupportedScheduleError("kappa is defined only for mixture schedules");
  }
  check_time(t);
  if (t == 0.0) return 0.0;
  if (t == 1.0) return 1.0;
  switch (schedule.kappa_kind()) {
    case KappaKind::Linear:
      return t;
    case KappaKind::Quadratic:
      return t * t;
    case KappaKind::Cosine:
      return 1.0 - std::cos(0.5 * std::numbers::pi * t);
  }
  return t;
}

BetaValue beta_at(const PathSchedule& schedule, double t) {
  if (schedule.kind() != PathKind::Metric) {
    throw UnsupportedScheduleError("beta is defined only for metric schedules");
  }
  check_time(t);
  BetaValue out;
  double limit = 1.0 - schedule.clamp_epsilon();
  if (t >= limit) {
    out.clamped = true;
    t = limit;
  }
  if (t == 0.0) return out;
  out.value = schedule.c() * std::pow(t / (1.0 - t), schedule.a());
  return out;
}

double beta_rate(const PathSchedule& schedule, double t) {
  if (schedule.kind() != PathKind::Metric) {
    throw UnsupportedScheduleError("beta is defined only for metric schedules");
  }
  check_time(t);
  double eps = schedule.clamp_epsilon();
  t = std::clamp(t, eps, 1.0 - eps);
  double a = schedule.a();
  return schedule.c() * a * std::pow(t, a - 1.0) / std::pow(1.0 - t, a + 1.0);
}

double log_conditional_prob(const PathSchedule& schedule, TokenId x, TokenId x1, double t) {
  check_token(schedule, x);
  check_token(schedule, x1);
  if (schedule.kind() == PathKind::Mixture) {
    double p = conditional_prob(schedule, x, x1, t);
    return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
  }
  double beta = beta_at(schedule, t).value;
  auto d = schedule.distances_from(x1);
  // d(x1, x1) = 0 so the largest exponent is 0 and the sum is >= 1.
  double z = 0.0;
  for (double dj : d) z += std::exp(-beta * dj);
  return -beta * d[x] - std::log(z);
}

double conditional_prob(const PathSchedule& schedule, TokenId x, TokenId x1, double t) {
  check_token(schedule, x);
  check_token(schedule, x1);
  if (schedule.kind() == PathKind::Mixture) {
    double k = kappa_at(schedule, t);
    return (1.0 - k) * schedule.base()[x] + (x == x1 ? k : 0.0);
  }
  return std::exp(log_conditional_prob(schedule, x, x1, t));
}

std::vector<double> conditional_distribution(const PathSchedule& schedule, TokenId x1, double t) {
  check_token(schedule, x1);
  std::size_t k = schedule.vocab_size();
  std::vector<double> row(k);
  if (schedule.kind() == PathKind::Mixture) {
    double kap = kappa_at(schedule, t);
    auto base = schedule.base();
    for (std::size_t x = 0; x < k; ++x) row[x] = (1.0 - kap) * base[x];
    row[x1] += kap;
    return row;
  }
  double beta = beta_at(schedule, t).value;
  auto d = schedule.distances_from(x1);
  double z = 0.0;
  for (std::size_t x = 0; x < k; ++x) {
    row[x] = std::exp(-beta * d[x]);
    z += row[x];
  }
  for (double& v : row) v /= z;
  return row;
}

TokenSequence sample_conditional(const PathSchedule& schedule, const TokenSequence& x1, double t,
                                 std::mt19937_64& rng, CorruptionScope scope) {
  check_time(t);
  TokenSequence out = x1;
  for (std::size_t i = 0; i < x1.size(); ++i) {
    if (scope == CorruptionScope::ResponseOnly && x1.segments[i] != Segment::Response) continue;
    auto row = conditional_distribution(schedule, x1.tokens[i], t);
    out.tokens[i] = static_cast<TokenId>(sample_categorical(row, uniform01(rng)));
  }
  return out;
}

void SequenceDistribution::add(std::vector<TokenId> seq, double p) {
  if (support.empty() && length == 0) length = seq.size();
  if (seq.size() != length) throw SizeError("sequence length differs from distribution length");
  if (!(p >= 0.0)) throw DomainError("negative probability");
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (support[i] == seq) {
      probs[i] += p;
      return;
    }
  }
  support.push_back(std::move(seq));
  probs.push_back(p);
}

SequenceDistribution SequenceDistribution::delta(std::vector<TokenId> seq) {
  SequenceDistribution q;
  q.length = seq.size();
  q.add(std::move(seq), 1.0);
  return q;
}

SequenceDistribution SequenceDistribution::uniform(std::size_t vocab_size, std::size_t length) {
  SequenceDistribution q;
  q.length = length;
  std::size_t states = 1;
  for (std::size_t i = 0; i < length; ++i) states *= vocab_size;
  double p = 1.0 / static_cast<double>(states);
  for (std::size_t s = 0; s < states; ++s) {
    q.support.push_back(decode_state(s, vocab_size, length));
    q.probs.push_back(p);
  }
  return q;
}

double SequenceDistribution::total() const {
  double s = 0.0;
  for (double p : probs) s += p;
  return s;
}

std::size_t encode_state(std::span<const TokenId> seq, std::size_t vocab_size) {
  std::size_t idx = 0;
  for (TokenId v : seq) idx = idx * vocab_size + v;
  return idx;
}

std::vector<TokenId> decode_state(std::size_t index, std::size_t vocab_size, std::size_t length) {
  std::vector<TokenId> seq(length);
  for (std::size_t i = length; i-- > 0;) {
    seq[i] = static_cast<TokenId>(index % vocab_size);
    index /= vocab_size;
  }
  return seq;
}

std::vector<double> marginal_oracle(const PathSchedule& schedule, const SequenceDistribution& q,
                                    double t, std::size_t state_cap) {
  check_time(t);
  const std::size_t k = schedule.vocab_size();
  const std::size_t d = q.length;
  std::size_t states = 1;
  for (std::size_t i = 0; i < d; ++i) {
    if (states > state_cap / k) throw SizeError("state space exceeds enumeration cap");
    states *= k;
  }
  if (q.support.size() > state_cap / states) throw SizeError("state space exceeds enumeration cap");

  std::vector<double> p(states, 0.0);
  std::vector<std::vector<double>> rows(d);
  for (std::size_t s = 0; s < q.support.size(); ++s) {
    const auto& x1 = q.support[s];
    for (std::size_t i = 0; i < d; ++i) rows[i] = conditional_distribution(schedule, x1[i], t);
    // Odometer over all K^D states, accumulating the product coordinate by coordinate.
    std::vector<TokenId> x(d, 0);
    for (std::size_t idx = 0; idx < states; ++idx) {
      double prod = q.probs[s];
      for (std::size_t i = 0; i < d; ++i) prod *= rows[i][x[i]];
      p[idx] += prod;
      for (std::size_t i = d; i-- > 0;) {
        if (++x[i] < k) break;
        x[i] = 0;
      }
    }
  }
  return p;
}

void to_json(nlohmann::json& j, const ScheduleSpec& s) {
  j = nlohmann::json{{"kind", s.kind},
                     {"kappa", s.kappa},
                     {"c", s.c},
                     {"a", s.a},
                     {"base", s.base},
                     {"K", s.vocab_size},
                     {"embedding_dim", s.embedding_dim},
                     {"embedding_seed", s.embedding_seed},
                     {"pad_id", s.pad_id},
                     {"eos_id", s.eos_id}};
}

void from_json(const nlohmann::json& j, ScheduleSpec& s) {
  ScheduleSpec d;
  s.kind = j.value("kind", d.kind);
  s.kappa = j.value("kappa", d.kappa);
  s.c = j.value("c", d.c);
  s.a = j.value("a", d.a);
  s.base = j.value("base", d.base);
  s.vocab_size = j.value("K", d.vocab_size);
  s.embedding_dim = j.value("embedding_dim", d.embedding_dim);
  s.embedding_seed = j.value("embedding_seed", d.embedding_seed);
  s.pad_id = j.value("pad_id", d.pad_id);
  s.eos_id = j.value("eos_id", d.eos_id);
}

Vocabulary make_vocabulary(const ScheduleSpec& spec) {
  return Vocabulary::random(spec.vocab_size, spec.embedding_dim, spec.embedding_seed,
                            SpecialTokens{spec.pad_id, spec.eos_id});
}

PathSchedule make_schedule(const ScheduleSpec& spec, const Vocabulary& vocab) {
  KappaKind kappa;
  if (spec.kappa == "linear") {
    kappa = KappaKind::Linear;
  } else if (spec.kappa == "quadratic") {
    kappa = KappaKind::Quadratic;
  } else if (spec.kappa == "cosine") {
    kappa = KappaKind::Cosine;
  } else {
    throw ConfigError("unknown kappa '" + spec.kappa + "'");
  }
  if (spec.kind == "metric") return PathSchedule::metric(vocab, spec.c, spec.a);
  if (spec.kind != "mixture") throw ConfigError("unknown schedule kind '" + spec.kind + "'");
  if (spec.base == "uniform") return PathSchedule::mixture(vocab.size(), kappa);
  if (spec.base == "mask") return PathSchedule::masked(vocab.size(), vocab.pad_id(), kappa);
  throw ConfigError("unknown base '" + spec.base + "'");
}

}  // namespace dfm
