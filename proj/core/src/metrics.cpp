// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dfm/metrics.hpp"

#include <cmath>
#include <limits>
#include <map>

namespace dfm {

double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw SizeError("distributions have different supports");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

KlResult kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw SizeError("distributions have different supports");
  KlResult r;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) {
      r.infinite = true;
      r.value = std::numeric_limits<double>::infinity();
      return r;
    }
    r.value += p[i] * std::log(p[i] / q[i]);
  }
  r.value = std::max(r.value, 0.0);
  return r;
}

std::vector<double> empirical_on_support(const SequenceDistribution& q,
                                         const std::vector<std::vector<TokenId>>& samples) {
  std::map<std::vector<TokenId>, std::size_t> index;
  for (std::size_t k = 0; k < q.support.size(); ++k) index.emplace(q.support[k], k);
  std::vector<double> emp(q.support.size() + 1, 0.0);
  if (samples.empty()) return emp;
  const double w = 1.0 / static_cast<double>(samples.size());
  for (const auto& s : samples) {
    auto it = index.find(s);
    emp[it == index.end() ? q.support.size() : it->second] += w;
  }
  return emp;
}

double tv_to_target(const SequenceDistribution& q, const std::vector<std::vector<TokenId>>& samples) {
  const auto emp = empirical_on_support(q, samples);
  std::vector<double> target(q.probs.begin(), q.probs.end());
  target.push_back(0.0);
  return tv_distance(emp, target);
}

double tv_between_samples(const std::vector<std::vector<TokenId>>& a,
                          const std::vector<std::vector<TokenId>>& b) {
  std::map<std::vector<TokenId>, std::pair<double, double>> mass;
  const double wa = a.empty() ? 0.0 : 1.0 / static_cast<double>(a.size());
  const double wb = b.empty() ? 0.0 : 1.0 / static_cast<double>(b.size());
  for (const auto& s : a) mass[s].first += wa;
  for (const auto& s : b) mass[s].second += wb;
  double tv = 0.0;
  for (const auto& [_, m] : mass) tv += std::abs(m.first - m.second);
  return 0.5 * tv;
}

double mean_reciprocal_rank(const Matrix& queries, const Matrix& candidates,
                            std::span<const std::size_t> query_labels,
                            std::span<const std::size_t> candidate_labels) {
  if (query_labels.size() != queries.rows || candidate_labels.size() != candidates.rows) {
    throw SizeError("one label per row required");
  }
  if (queries.cols != candidates.cols) throw SizeError("query/candidate widths differ");
  if (queries.rows == 0) return 0.0;
  double total = 0.0;
  std::vector<double> sims(candidates.rows);
  for (std::size_t i = 0; i < queries.rows; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < candidates.rows; ++j) {
      sims[j] = cosine_similarity(queries.row(i), candidates.row(j));
      if (candidate_labels[j] == query_labels[i]) {
        best = std::max(best, sims[j]);
        any = true;
      }
    }
    if (!any) continue;  // contributes 0
    std::size_t rank = 1;
    for (std::size_t j = 0; j < candidates.rows; ++j) {
      if (candidate_labels[j] != query_labels[i] && sims[j] >= best) ++rank;
    }
    total += 1.0 / static_cast<double>(rank);
  }
  return total / static_cast<double>(queries.rows);
}

double random_reciprocal_rank(std::size_t n, std::size_t relevant) {
  if (relevant == 0 || n == 0) return 0.0;
  if (relevant > n) throw DomainError("more relevant items than candidates");
  // P(first relevant at r) = C(n - r, m - 1) / C(n, m), built as a running product.
  double p = static_cast<double>(relevant) / static_cast<double>(n);  // r = 1
  double total = p;
  for (std::size_t r = 2; r + relevant - 1 <= n; ++r) {
    p *= static_cast<double>(n - r + 2 - relevant) / static_cast<double>(n - r + 1);
    total += p / static_cast<double>(r);
  }
  return total;
}

double random_mrr_baseline(std::span<const std::size_t> query_labels,
                           std::span<const std::size_t> candidate_labels) {
  if (query_labels.empty()) return 0.0;
  std::map<std::size_t, std::size_t> counts;
  for (auto l : candidate_labels) ++counts[l];
  double total = 0.0;
  for (auto l : query_labels) {
    auto it = counts.find(l);
    if (it != counts.end()) total += random_reciprocal_rank(candidate_labels.size(), it->second);
  }
  return total / static_cast<double>(query_labels.size());
}

}  // namespace dfm
