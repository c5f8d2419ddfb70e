// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dfm/tensor.hpp"

namespace dfm {

enum class OptimizerKind { SgdMomentum, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SgdMomentum;
  double learning_rate = 3e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global-norm clip; 0 disables.
  double clip_norm = 0.0;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);

/// First-order optimizer over a fixed list of parameter tensors. State is
/// allocated lazily on the first step and keyed by list position.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}

  const OptimizerConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::size_t steps() const { return steps_; }

  /// params[i] -= update(grads[i]). Shapes must match pairwise.
  void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads);

 private:
  OptimizerConfig config_;
  std::vector<Matrix> m_, v_;
  std::size_t steps_ = 0;
};

}  // namespace dfm
