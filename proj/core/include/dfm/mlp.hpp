// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

// Two-layer tanh MLP used by the toy tokenizer and the sub-code heads.

#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "dfm/rng.hpp"
#include "dfm/tensor.hpp"

namespace dfm {

struct Mlp {
  Matrix w1, b1, w2, b2;  // in x hid, 1 x hid, hid x out, 1 x out

  Mlp() = default;
  Mlp(std::size_t in, std::size_t hid, std::size_t out, std::mt19937_64& gen)
      : w1(in, hid), b1(1, hid), w2(hid, out), b2(1, out) {
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hid));
    for (double& v : w1.data) v = s1 * standard_normal(gen);
    for (double& v : w2.data) v = s2 * standard_normal(gen);
  }

  std::size_t in() const { return w1.rows; }
  std::size_t hidden() const { return w1.cols; }
  std::size_t out() const { return w2.cols; }

  /// Returns the output; `act` receives the hidden activations.
  std::vector<double> forward(std::span<const double> x, std::vector<double>& act) const {
    act.assign(b1.data.begin(), b1.data.end());
    for (std::size_t i = 0; i < w1.rows; ++i) {
      const double xi = x[i];
      if (xi == 0.0) continue;
      auto r = w1.row(i);
      for (std::size_t j = 0; j < act.size(); ++j) act[j] += xi * r[j];
    }
    for (double& a : act) a = std::tanh(a);
    std::vector<double> y(b2.data.begin(), b2.data.end());
    for (std::size_t i = 0; i < act.size(); ++i) {
      auto r = w2.row(i);
      for (std::size_t j = 0; j < y.size(); ++j) y[j] += act[i] * r[j];
    }
    return y;
  }

  /// Accumulates parameter gradients into `g`; returns d loss / d x.
  std::vector<double> backward(std::span<const double> x, std::span<const double> act,
                               std::span<const double> dy, Mlp& g) const {
    std::vector<double> dpre(act.size(), 0.0);
    for (std::size_t j = 0; j < dy.size(); ++j) g.b2.data[j] += dy[j];
    for (std::size_t i = 0; i < act.size(); ++i) {
      auto r = w2.row(i);
      auto gr = g.w2.row(i);
      double s = 0.0;
      for (std::size_t j = 0; j < dy.size(); ++j) {
        gr[j] += act[i] * dy[j];
        s += r[j] * dy[j];
      }
      dpre[i] = s * (1.0 - act[i] * act[i]);
    }
    std::vector<double> dx(x.size(), 0.0);
    for (std::size_t j = 0; j < dpre.size(); ++j) g.b1.data[j] += dpre[j];
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto r = w1.row(i);
      auto gr = g.w1.row(i);
      double s = 0.0;
      for (std::size_t j = 0; j < dpre.size(); ++j) {
        gr[j] += x[i] * dpre[j];
        s += r[j] * dpre[j];
      }
      dx[i] = s;
    }
    return dx;
  }

  Mlp zeros_like() const {
    Mlp z;
    z.w1 = Matrix(w1.rows, w1.cols);
    z.b1 = Matrix(b1.rows, b1.cols);
    z.w2 = Matrix(w2.rows, w2.cols);
    z.b2 = Matrix(b2.rows, b2.cols);
    return z;
  }

  std::vector<Matrix*> tensors() { return {&w1, &b1, &w2, &b2}; }
  std::vector<const Matrix*> tensors() const { return {&w1, &b1, &w2, &b2}; }
  std::size_t parameter_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
};

}  // namespace dfm
