// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

// Row kernels shared by the full forward, the training record path and the
// cached forward. Each slot is computed by the same sequence of floating point
// operations regardless of which path invokes it, which is what makes the
// forced-recompute cache bit-identical to the uncached model.

#pragma once

#include <cmath>
#include <span>

#include "dfm/tensor.hpp"
#include "dfm/transformer.hpp"

namespace dfm::detail {

inline constexpr double kLayerNormEps = 1e-5;

/// out = bias + x W
inline void affine_row(std::span<const double> x, const Matrix& w, const Matrix& bias,
                       std::span<double> out) {
  const std::size_t n = w.cols;
  for (std::size_t j = 0; j < n; ++j) out[j] = bias.data[j];
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double xi = x[i];
    const double* wr = w.data.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += xi * wr[j];
  }
}

/// Returns 1 / sqrt(var + eps).
inline double layer_norm_row(std::span<const double> x, const Matrix& gain, const Matrix& bias,
                             std::span<double> xhat, std::span<double> out) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t j = 0; j < n; ++j) {
    xhat[j] = (x[j] - mean) * rstd;
    out[j] = xhat[j] * gain.data[j] + bias.data[j];
  }
  return rstd;
}

inline double gelu(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
  constexpr double k = 0.7978845608028654;
  const double u = k * (x + 0.044715 * x * x * x);
  const double th = std::tanh(u);
  const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

/// Multi-head attention for one query row against all key/value rows.
/// probs receives heads x S weights.
inline void attention_row(std::span<const double> q, const Matrix& keys, const Matrix& values,
                          std::size_t heads, std::span<double> probs, std::span<double> out) {
  const std::size_t slots = keys.rows;
  const std::size_t width = keys.cols;
  const std::size_t dh = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < heads; ++h) {
    std::span<double> p = probs.subspan(h * slots, slots);
    const double* qh = q.data() + h * dh;
    for (std::size_t r = 0; r < slots; ++r) {
      const double* kr = keys.data.data() + r * width + h * dh;
      double s = 0.0;
      for (std::size_t c = 0; c < dh; ++c) s += qh[c] * kr[c];
      p[r] = s * scale;
    }
    softmax_inplace(p);
    double* oh = out.data() + h * dh;
    for (std::size_t c = 0; c < dh; ++c) oh[c] = 0.0;
    for (std::size_t r = 0; r < slots; ++r) {
      const double pr = p[r];
      const double* vr = values.data.data() + r * width + h * dh;
      for (std::size_t c = 0; c < dh; ++c) oh[c] += pr * vr[c];
    }
  }
}

/// Views into per-slot intermediate storage.
struct SlotBuffers {
  std::span<double> xhat1, ln1, q, k, v, probs, attn, mid, xhat2, ln2, pre, act;
  double* rstd1 = nullptr;
  double* rstd2 = nullptr;
};

/// Pre-attention half: layer norm and q/k/v projections.
inline void layer_project(const LayerWeights& w, std::span<const double> h, SlotBuffers& b) {
  *b.rstd1 = layer_norm_row(h, w.ln1_gain, w.ln1_bias, b.xhat1, b.ln1);
  affine_row(b.ln1, w.wq, w.bq, b.q);
  affine_row(b.ln1, w.wk, w.bk, b.k);
  affine_row(b.ln1, w.wv, w.bv, b.v);
}

/// Only the value projection, used as the cache similarity signal.
inline void layer_value(const LayerWeights& w, std::span<const double> h, std::span<double> xhat,
                        std::span<double> ln, std::span<double> v) {
  layer_norm_row(h, w.ln1_gain, w.ln1_bias, xhat, ln);
  affine_row(ln, w.wv, w.bv, v);
}

/// Post-attention half: attention, output projection, residual, MLP, residual.
inline void layer_finish(const LayerWeights& w, std::size_t heads, std::span<const double> h,
                         const Matrix& keys, const Matrix& values, SlotBuffers& b,
                         std::span<double> h_out) {
  attention_row(b.q, keys, values, heads, b.probs, b.attn);
  affine_row(b.attn, w.wo, w.bo, b.mid);
  for (std::size_t j = 0; j < h.size(); ++j) b.mid[j] += h[j];
  *b.rstd2 = layer_norm_row(b.mid, w.ln2_gain, w.ln2_bias, b.xhat2, b.ln2);
  affine_row(b.ln2, w.w1, w.b1, b.pre);
  for (std::size_t j = 0; j < b.pre.size(); ++j) b.act[j] = gelu(b.pre[j]);
  affine_row(b.act, w.w2, w.b2, h_out);
  for (std::size_t j = 0; j < h.size(); ++j) h_out[j] += b.mid[j];
}

/// Final layer norm + vocabulary head for one slot.
inline void head_row(const TransformerWeights& w, std::span<const double> h,
                     std::span<double> xhat, std::span<double> normed, std::span<double> logits,
                     double* rstd) {
  *rstd = layer_norm_row(h, w.final_gain, w.final_bias, xhat, normed);
  affine_row(normed, w.head_weight, w.head_bias, logits);
}

/// Scratch storage for one slot when activations are not recorded.
struct SlotScratch {
  std::vector<double> xhat1, ln1, q, k, v, probs, attn, mid, xhat2, ln2, pre, act;
  double rstd1 = 0.0, rstd2 = 0.0;

  SlotScratch(std::size_t width, std::size_t mlp, std::size_t heads, std::size_t slots)
      : xhat1(width), ln1(width), q(width), k(width), v(width), probs(heads * slots),
        attn(width), mid(width), xhat2(width), ln2(width), pre(mlp), act(mlp) {}

  SlotBuffers view() {
    return SlotBuffers{xhat1, ln1, q, k, v, probs, attn, mid, xhat2, ln2, pre, act, &rstd1, &rstd2};
  }
};

}  // namespace dfm::detail
