// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dfm/transformer.hpp"

#include <cmath>
#include <random>

#include "dfm/rng.hpp"
#include "kernels.hpp"

namespace dfm {
namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& gen) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = stddev * standard_normal(gen);
  return m;
}

// rows_out += a^T b for row vectors a (n) and b (m), i.e. outer product.
void add_outer(Matrix& out, std::span<const double> a, std::span<const double> b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ai = a[i];
    if (ai == 0.0) continue;
    double* row = out.data.data() + i * out.cols;
    for (std::size_t j = 0; j < b.size(); ++j) row[j] += ai * b[j];
  }
}

// out = dy W^T  (dy has W.cols entries, out has W.rows entries)
void mul_transposed(std::span<const double> dy, const Matrix& w, std::span<double> out) {
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double* wr = w.data.data() + i * w.cols;
    double s = 0.0;
    for (std::size_t j = 0; j < w.cols; ++j) s += dy[j] * wr[j];
    out[i] = s;
  }
}

void add_to(Matrix& bias, std::span<const double> dy) {
  for (std::size_t j = 0; j < dy.size(); ++j) bias.data[j] += dy[j];
}

// Layer norm backward; accumulates into dx and the affine parameters.
void layer_norm_backward(std::span<const double> dy, std::span<const double> xhat, double rstd,
                         const Matrix& gain, Matrix& dgain, Matrix& dbias, std::span<double> dx) {
  const std::size_t n = dy.size();
  double mean_g = 0.0;
  double mean_gx = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double g = dy[j] * gain.data[j];
    mean_g += g;
    mean_gx += g * xhat[j];
    dgain.data[j] += dy[j] * xhat[j];
    dbias.data[j] += dy[j];
  }
  mean_g /= static_cast<double>(n);
  mean_gx /= static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    dx[j] += rstd * (dy[j] * gain.data[j] - mean_g - xhat[j] * mean_gx);
  }
}

void allocate(LayerRecord& r, std::size_t slots, std::size_t width, std::size_t mlp,
              std::size_t heads) {
  r.input.resize(slots, width);
  r.xhat1.resize(slots, width);
  r.ln1.resize(slots, width);
  r.rstd1.assign(slots, 0.0);
  r.q.resize(slots, width);
  r.k.resize(slots, width);
  r.v.resize(slots, width);
  r.probs.resize(slots, heads * slots);
  r.attn.resize(slots, width);
  r.mid.resize(slots, width);
  r.xhat2.resize(slots, width);
  r.ln2.resize(slots, width);
  r.rstd2.assign(slots, 0.0);
  r.pre.resize(slots, mlp);
  r.act.resize(slots, mlp);
}

detail::SlotBuffers record_view(LayerRecord& r, std::size_t s) {
  return detail::SlotBuffers{r.xhat1.row(s), r.ln1.row(s),   r.q.row(s),     r.k.row(s),
                             r.v.row(s),     r.probs.row(s), r.attn.row(s),  r.mid.row(s),
                             r.xhat2.row(s), r.ln2.row(s),   r.pre.row(s),   r.act.row(s),
                             &r.rstd1[s],    &r.rstd2[s]};
}

}  // namespace

TransformerWeights TransformerWeights::zeros_like() const {
  TransformerWeights z = *this;
  z.set_zero();
  return z;
}

std::size_t TransformerWeights::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
  return n;
}

void TransformerWeights::set_zero() {
  for_each([](const std::string&, Matrix& m) { m.fill(0.0); });
}

void TransformerWeights::axpy(double scale, const TransformerWeights& other) {
  std::vector<const Matrix*> src;
  other.for_each([&](const std::string&, const Matrix& m) { src.push_back(&m); });
  std::size_t idx = 0;
  for_each([&](const std::string&, Matrix& m) {
    const Matrix& o = *src[idx++];
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] += scale * o.data[i];
  });
}

double TransformerWeights::squared_norm() const {
  double s = 0.0;
  for_each([&](const std::string&, const Matrix& m) {
    for (double v : m.data) s += v * v;
  });
  return s;
}

TrainableDenoiser::TrainableDenoiser(ArchitectureConfig arch, std::uint64_t init_seed)
    : arch_(arch) {
  if (arch_.vocab_size < 2) throw DomainError("vocabulary needs at least two tokens");
  if (arch_.width == 0 || arch_.heads == 0 || arch_.width % arch_.heads != 0) {
    throw DomainError("width must be a positive multiple of the head count");
  }
  if (arch_.condition_drop_id >= arch_.vocab_size) {
    throw DomainError("condition-drop id outside vocabulary");
  }
  std::mt19937_64 gen(init_seed);
  const std::size_t h = arch_.width;
  const std::size_t f = arch_.mlp_width();
  constexpr double kEmbedStd = 0.1;
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(h));
  const double resid_std = proj_std / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(arch_.layers, 1)));

  auto& w = weights_;
  w.token_embedding = gaussian(arch_.vocab_size, h, kEmbedStd, gen);
  w.position_embedding = arch_.position_embeddings ? gaussian(arch_.max_length + 1, h, kEmbedStd, gen)
                                                   : Matrix(arch_.max_length + 1, h);
  w.bos = gaussian(1, h, kEmbedStd, gen);
  w.signal_projection =
      arch_.signal_dim > 0
          ? gaussian(arch_.signal_dim, h, kEmbedStd / std::sqrt(static_cast<double>(arch_.signal_dim)), gen)
          : Matrix(0, h);
  w.layers.resize(arch_.layers);
  for (auto& l : w.layers) {
    l.ln1_gain = Matrix(1, h, 1.0);
    l.ln1_bias = Matrix(1, h);
    l.wq = gaussian(h, h, proj_std, gen);
    l.bq = Matrix(1, h);
    l.wk = gaussian(h, h, proj_std, gen);
    l.bk = Matrix(1, h);
    l.wv = gaussian(h, h, proj_std, gen);
    l.bv = Matrix(1, h);
    l.wo = gaussian(h, h, resid_std, gen);
    l.bo = Matrix(1, h);
    l.ln2_gain = Matrix(1, h, 1.0);
    l.ln2_bias = Matrix(1, h);
    l.w1 = gaussian(h, f, proj_std, gen);
    l.b1 = Matrix(1, f);
    l.w2 = gaussian(f, h, resid_std / std::sqrt(static_cast<double>(arch_.mlp_ratio)), gen);
    l.b2 = Matrix(1, h);
  }
  w.final_gain = Matrix(1, h, 1.0);
  w.final_bias = Matrix(1, h);
  w.head_weight = gaussian(h, arch_.vocab_size, proj_std, gen);
  w.head_bias = Matrix(1, arch_.vocab_size);
}

void TrainableDenoiser::set_signal_codebook(Matrix rows) {
  if (rows.rows > 0 && rows.cols != arch_.signal_dim) {
    throw SizeError("signal codebook width differs from the architecture signal_dim");
  }
  if (arch_.signal_first_id + rows.rows > arch_.vocab_size) {
    throw SizeError("signal token range exceeds the vocabulary");
  }
  signal_codebook_ = std::move(rows);
}

std::vector<double> TrainableDenoiser::time_embedding(double t) const {
  const std::size_t h = arch_.width;
  std::vector<double> te(h, 0.0);
  const std::size_t half = h / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double omega =
        8.0 * std::pow(100.0, -static_cast<double>(i) / static_cast<double>(half));
    te[2 * i] = arch_.time_scale * std::sin(omega * t);
    te[2 * i + 1] = arch_.time_scale * std::cos(omega * t);
  }
  return te;
}

TokenId TrainableDenoiser::input_token(const TokenSequence& x_t, std::size_t i,
                                       bool condition_dropped) const {
  if (condition_dropped && x_t.segments[i] == Segment::Instruction) return arch_.condition_drop_id;
  return x_t.tokens[i];
}

void TrainableDenoiser::embed_slot(std::size_t slot, TokenId token,
                                   std::span<const double> time_emb, std::span<double> out) const {
  const std::size_t h = arch_.width;
  const auto& w = weights_;
  if (slot == 0) {
    for (std::size_t j = 0; j < h; ++j) out[j] = w.bos.data[j];
  } else if (signal_codebook_.rows > 0 && token >= arch_.signal_first_id &&
             token < arch_.signal_first_id + signal_codebook_.rows) {
    auto rep = signal_codebook_.row(token - arch_.signal_first_id);
    for (std::size_t j = 0; j < h; ++j) out[j] = 0.0;
    for (std::size_t e = 0; e < rep.size(); ++e) {
      const double r = rep[e];
      const double* pr = w.signal_projection.data.data() + e * h;
      for (std::size_t j = 0; j < h; ++j) out[j] += r * pr[j];
    }
  } else {
    auto row = w.token_embedding.row(token);
    for (std::size_t j = 0; j < h; ++j) out[j] = row[j];
  }
  if (arch_.position_embeddings) {
    auto pos = w.position_embedding.row(slot);
    for (std::size_t j = 0; j < h; ++j) out[j] += pos[j];
  }
  for (std::size_t j = 0; j < h; ++j) out[j] += time_emb[j];
}

DenoiserOutput TrainableDenoiser::forward(const TokenSequence& x_t, double t,
                                          bool condition_dropped, ForwardRecord* record,
                                          bool collect_features) const {
  const std::size_t d = x_t.size();
  if (d > arch_.max_length) throw SizeError("sequence longer than the model maximum");
  if (x_t.segments.size() != d) throw SizeError("token/segment length mismatch");
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("time outside [0,1]");
  const std::size_t slots = d + 1;
  const std::size_t h = arch_.width;
  const std::size_t f = arch_.mlp_width();

  ForwardRecord local;
  ForwardRecord& rec = record ? *record : local;
  rec.slot_tokens.assign(slots, 0);
  rec.layers.resize(arch_.layers);

  const auto te = time_embedding(t);
  Matrix hcur(slots, h);
  for (std::size_t s = 0; s < slots; ++s) {
    TokenId tok = 0;
    if (s > 0) {
      tok = input_token(x_t, s - 1, condition_dropped);
      if (tok >= arch_.vocab_size) throw DomainError("token outside model vocabulary");
    }
    rec.slot_tokens[s] = tok;
    embed_slot(s, tok, te, hcur.row(s));
  }

  DenoiserOutput out;
  for (std::size_t l = 0; l < arch_.layers; ++l) {
    const auto& w = weights_.layers[l];
    auto& lr = rec.layers[l];
    allocate(lr, slots, h, f, arch_.heads);
    lr.input = hcur;
    for (std::size_t s = 0; s < slots; ++s) {
      auto b = record_view(lr, s);
      detail::layer_project(w, lr.input.row(s), b);
    }
    for (std::size_t s = 0; s < slots; ++s) {
      auto b = record_view(lr, s);
      detail::layer_finish(w, arch_.heads, lr.input.row(s), lr.k, lr.v, b, hcur.row(s));
    }
    if (collect_features) {
      out.hidden_features.push_back(hcur);
      out.value_features.push_back(lr.v);
    }
  }

  rec.final_input = hcur;
  rec.final_xhat.resize(slots, h);
  rec.final_out.resize(slots, h);
  rec.final_rstd.assign(slots, 0.0);
  out.logits = Matrix(d, arch_.vocab_size);
  for (std::size_t i = 0; i < d; ++i) {
    detail::head_row(weights_, rec.final_input.row(i), rec.final_xhat.row(i), rec.final_out.row(i),
                     out.logits.row(i), &rec.final_rstd[i]);
  }
  return out;
}

void TrainableDenoiser::backward(const ForwardRecord& rec, const Matrix& dlogits,
                                 TransformerWeights& g) const {
  const std::size_t slots = rec.slot_tokens.size();
  const std::size_t d = slots - 1;
  const std::size_t h = arch_.width;
  const std::size_t f = arch_.mlp_width();
  const std::size_t heads = arch_.heads;
  const std::size_t dh = arch_.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (dlogits.rows != d || dlogits.cols != arch_.vocab_size) {
    throw SizeError("dlogits shape does not match the recorded forward");
  }
  const auto& w = weights_;

  // Head and final layer norm. Slot d feeds no logits row.
  Matrix dh_cur(slots, h);
  std::vector<double> dnormed(h);
  for (std::size_t i = 0; i < d; ++i) {
    auto dy = dlogits.row(i);
    add_outer(g.head_weight, rec.final_out.row(i), dy);
    add_to(g.head_bias, dy);
    mul_transposed(dy, w.head_weight, dnormed);
    layer_norm_backward(dnormed, rec.final_xhat.row(i), rec.final_rstd[i], w.final_gain,
                        g.final_gain, g.final_bias, dh_cur.row(i));
  }

  std::vector<double> dact(f), dpre(f), dln2(h), dattn(h), dln1(h), dprobs(slots);
  Matrix dmid(slots, h), dq(slots, h), dk(slots, h), dv(slots, h);
  for (std::size_t l = arch_.layers; l-- > 0;) {
    const auto& lw = w.layers[l];
    auto& lg = g.layers[l];
    const auto& lr = rec.layers[l];
    dmid.fill(0.0);
    dq.fill(0.0);
    dk.fill(0.0);
    dv.fill(0.0);

    for (std::size_t s = 0; s < slots; ++s) {
      auto dy = dh_cur.row(s);
      // h_out = mid + act W2 + b2
      add_outer(lg.w2, lr.act.row(s), dy);
      add_to(lg.b2, dy);
      mul_transposed(dy, lw.w2, dact);
      auto pre = lr.pre.row(s);
      for (std::size_t j = 0; j < f; ++j) dpre[j] = dact[j] * detail::gelu_grad(pre[j]);
      add_outer(lg.w1, lr.ln2.row(s), dpre);
      add_to(lg.b1, dpre);
      mul_transposed(dpre, lw.w1, dln2);
      auto dm = dmid.row(s);
      for (std::size_t j = 0; j < h; ++j) dm[j] = dy[j];
      layer_norm_backward(dln2, lr.xhat2.row(s), lr.rstd2[s], lw.ln2_gain, lg.ln2_gain,
                          lg.ln2_bias, dm);
      // mid = input + attn Wo + bo
      add_outer(lg.wo, lr.attn.row(s), dm);
      add_to(lg.bo, dm);
      mul_transposed(dm, lw.wo, dattn);
      // attention
      auto probs = lr.probs.row(s);
      auto qs = lr.q.row(s);
      auto dqs = dq.row(s);
      for (std::size_t hd = 0; hd < heads; ++hd) {
        const std::size_t off = hd * dh;
        auto p = probs.subspan(hd * slots, slots);
        double weighted = 0.0;
        for (std::size_t r = 0; r < slots; ++r) {
          const double* vr = lr.v.data.data() + r * h + off;
          double dp = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dp += dattn[off + c] * vr[c];
          dprobs[r] = dp;
          weighted += p[r] * dp;
          double* dvr = dv.data.data() + r * h + off;
          for (std::size_t c = 0; c < dh; ++c) dvr[c] += p[r] * dattn[off + c];
        }
        for (std::size_t r = 0; r < slots; ++r) {
          const double ds = p[r] * (dprobs[r] - weighted) * scale;
          if (ds == 0.0) continue;
          const double* kr = lr.k.data.data() + r * h + off;
          double* dkr = dk.data.data() + r * h + off;
          for (std::size_t c = 0; c < dh; ++c) {
            dqs[off + c] += ds * kr[c];
            dkr[c] += ds * qs[off + c];
          }
        }
      }
    }

    // q/k/v projections and first layer norm; residual path from dmid.
    Matrix dinput = dmid;
    for (std::size_t s = 0; s < slots; ++s) {
      auto ln1 = lr.ln1.row(s);
      add_outer(lg.wq, ln1, dq.row(s));
      add_to(lg.bq, dq.row(s));
      add_outer(lg.wk, ln1, dk.row(s));
      add_to(lg.bk, dk.row(s));
      add_outer(lg.wv, ln1, dv.row(s));
      add_to(lg.bv, dv.row(s));
      std::vector<double> tmp(h);
      mul_transposed(dq.row(s), lw.wq, dln1);
      mul_transposed(dk.row(s), lw.wk, tmp);
      for (std::size_t j = 0; j < h; ++j) dln1[j] += tmp[j];
      mul_transposed(dv.row(s), lw.wv, tmp);
      for (std::size_t j = 0; j < h; ++j) dln1[j] += tmp[j];
      layer_norm_backward(dln1, lr.xhat1.row(s), lr.rstd1[s], lw.ln1_gain, lg.ln1_gain,
                          lg.ln1_bias, dinput.row(s));
    }
    dh_cur = std::move(dinput);
  }

  // Embeddings.
  for (std::size_t s = 0; s < slots; ++s) {
    auto dy = dh_cur.row(s);
    if (arch_.position_embeddings) {
      auto pos = g.position_embedding.row(s);
      for (std::size_t j = 0; j < h; ++j) pos[j] += dy[j];
    }
    if (s == 0) {
      add_to(g.bos, dy);
      continue;
    }
    const TokenId tok = rec.slot_tokens[s];
    if (signal_codebook_.rows > 0 && tok >= arch_.signal_first_id &&
        tok < arch_.signal_first_id + signal_codebook_.rows) {
      add_outer(g.signal_projection, signal_codebook_.row(tok - arch_.signal_first_id), dy);
    } else {
      auto row = g.token_embedding.row(tok);
      for (std::size_t j = 0; j < h; ++j) row[j] += dy[j];
    }
  }
}

std::vector<double> TrainableDenoiser::retrieval_feature(const TokenSequence& sequence,
                                                         TokenId eos_id) const {
  std::size_t eos_pos = sequence.size();
  for (std::size_t i = sequence.size(); i-- > 0;) {
    if (sequence.tokens[i] == eos_id) {
      eos_pos = i;
      break;
    }
  }
  if (eos_pos == sequence.size()) throw PreconditionError("sequence contains no EOS token");
  auto out = forward(sequence, 1.0, false, nullptr, true);
  const auto row = out.hidden_features.back().row(eos_pos + 1);
  // The EOS slot predicts what follows EOS; its predictive law is shared
  // across modalities where raw hidden states are not.
  std::vector<double> xhat(arch_.width), normed(arch_.width), feat(arch_.vocab_size);
  double rstd = 0.0;
  detail::head_row(weights_, row, xhat, normed, feat, &rstd);
  softmax_inplace(feat);
  for (double& v : feat) v = std::sqrt(v);
  return feat;
}

}  // namespace dfm
