// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dfm/denoiser.hpp"
#include "dfm/tensor.hpp"
#include "dfm/types.hpp"

namespace dfm {

/// Shape of the bidirectional denoiser.
struct ArchitectureConfig {
  std::size_t vocab_size = 16;
  /// Longest token sequence accepted; the model has max_length + 1 slots.
  std::size_t max_length = 32;
  std::size_t width = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  bool position_embeddings = true;
  /// Amplitude of the additive sinusoidal time embedding.
  double time_scale = 0.1;
  TokenId condition_drop_id = 0;
  /// Token ids [signal_first_id, signal_first_id + signal_codebook.rows) are
  /// embedded through the representative-vector projection instead of the
  /// token table. Zero rows disables the path.
  TokenId signal_first_id = 0;
  std::size_t signal_dim = 0;

  std::size_t head_dim() const { return width / heads; }
  std::size_t mlp_width() const { return width * mlp_ratio; }
  friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

struct LayerWeights {
  Matrix ln1_gain, ln1_bias;
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln2_gain, ln2_bias;
  Matrix w1, b1, w2, b2;

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "ln1.gain", ln1_gain);
    f(prefix + "ln1.bias", ln1_bias);
    f(prefix + "attn.wq", wq);
    f(prefix + "attn.bq", bq);
    f(prefix + "attn.wk", wk);
    f(prefix + "attn.bk", bk);
    f(prefix + "attn.wv", wv);
    f(prefix + "attn.bv", bv);
    f(prefix + "attn.wo", wo);
    f(prefix + "attn.bo", bo);
    f(prefix + "ln2.gain", ln2_gain);
    f(prefix + "ln2.bias", ln2_bias);
    f(prefix + "mlp.w1", w1);
    f(prefix + "mlp.b1", b1);
    f(prefix + "mlp.w2", w2);
    f(prefix + "mlp.b2", b2);
  }
};

/// Every trainable tensor. Row-vector convention: y = x W + b.
struct TransformerWeights {
  Matrix token_embedding;     // K x H
  Matrix position_embedding;  // (max_length + 1) x H
  Matrix bos;                 // 1 x H, begin-of-sequence state
  Matrix signal_projection;   // signal_dim x H
  std::vector<LayerWeights> layers;
  Matrix final_gain, final_bias;
  Matrix head_weight;  // H x K
  Matrix head_bias;    // 1 x K

  template <typename F>
  void for_each(F&& f) {
    f("token_embedding", token_embedding);
    f("position_embedding", position_embedding);
    f("bos", bos);
    f("signal_projection", signal_projection);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].for_each("layers." + std::to_string(l) + ".", f);
    }
    f("final.gain", final_gain);
    f("final.bias", final_bias);
    f("head.weight", head_weight);
    f("head.bias", head_bias);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<TransformerWeights*>(this)->for_each(
        [&](const std::string& name, Matrix& m) { f(name, static_cast<const Matrix&>(m)); });
  }

  /// Same shapes, all zeros.
  TransformerWeights zeros_like() const;
  std::size_t parameter_count() const;
  void set_zero();
  /// this += scale * other
  void axpy(double scale, const TransformerWeights& other);
  double squared_norm() const;
};

/// Per-slot activations of one layer, kept for the backward pass.
struct LayerRecord {
  Matrix input;                 // S x H
  Matrix xhat1, ln1;            // S x H
  std::vector<double> rstd1;    // S
  Matrix q, k, v;               // S x H
  Matrix probs;                 // S x (heads * S)
  Matrix attn;                  // S x H
  Matrix mid;                   // S x H
  Matrix xhat2, ln2;            // S x H
  std::vector<double> rstd2;    // S
  Matrix pre, act;              // S x F
};

struct ForwardRecord {
  std::vector<TokenId> slot_tokens;  // token feeding each slot (slot 0 unused)
  std::vector<LayerRecord> layers;
  Matrix final_input, final_xhat, final_out;
  std::vector<double> final_rstd;
};

/// Small bidirectional transformer p_{1|t}(x1 | x_t) with a hand-derived
/// backward pass.
///
/// Shift-by-one: the input is [BOS, x_0, ..., x_{D-1}] and logits for position
/// i are read from slot i, i.e. the slot holding x_{i-1} (BOS for i = 0).
/// Attention is non-causal. Time enters as a sinusoidal embedding added to
/// every slot.
class TrainableDenoiser final : public Denoiser {
 public:
  TrainableDenoiser(ArchitectureConfig arch, std::uint64_t init_seed);

  const ArchitectureConfig& arch() const { return arch_; }
  TransformerWeights& weights() { return weights_; }
  const TransformerWeights& weights() const { return weights_; }

  /// Fixed (non-trainable) representative vectors for signal tokens,
  /// one row per token id, signal_dim columns.
  const Matrix& signal_codebook() const { return signal_codebook_; }
  void set_signal_codebook(Matrix rows);

  /// Full forward. `record` receives activations for backward();
  /// `collect_features` fills hidden/value feature matrices.
  DenoiserOutput forward(const TokenSequence& x_t, double t, bool condition_dropped,
                         ForwardRecord* record = nullptr, bool collect_features = false) const;

  /// Accumulates parameter gradients of sum(dlogits * logits) into `grads`.
  void backward(const ForwardRecord& record, const Matrix& dlogits,
                TransformerWeights& grads) const;

  /// Square-root predictive distribution of the slot holding the final EOS
  /// (unit L2 norm, so cosine similarity is the Bhattacharyya coefficient).
  std::vector<double> retrieval_feature(const TokenSequence& sequence, TokenId eos_id) const;

  DenoiserOutput predict(const TokenSequence& x_t, double t, bool condition_dropped) override {
    return forward(x_t, t, condition_dropped);
  }
  std::size_t vocab_size() const override { return arch_.vocab_size; }

  /// Token fed to the model for position i (after condition dropping).
  TokenId input_token(const TokenSequence& x_t, std::size_t i, bool condition_dropped) const;
  /// Input row for a slot: token/BOS + position + time embedding.
  void embed_slot(std::size_t slot, TokenId token, std::span<const double> time_emb,
                  std::span<double> out) const;
  std::vector<double> time_embedding(double t) const;

 private:
  ArchitectureConfig arch_;
  TransformerWeights weights_;
  Matrix signal_codebook_;
};

}  // namespace dfm
