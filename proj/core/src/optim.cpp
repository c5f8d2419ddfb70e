// Copyright 2026 The dfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dfm/optim.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "dfm/types.hpp"

namespace dfm {

void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = {{"kind", c.kind == OptimizerKind::Adam ? "adam" : "sgd_momentum"},
       {"learning_rate", c.learning_rate},
       {"momentum", c.momentum},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"epsilon", c.epsilon},
       {"clip_norm", c.clip_norm}};
}

void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  OptimizerConfig d;
  const auto kind = j.value("kind", std::string("sgd_momentum"));
  if (kind == "adam") {
    d.kind = OptimizerKind::Adam;
  } else if (kind == "sgd_momentum") {
    d.kind = OptimizerKind::SgdMomentum;
  } else {
    throw ConfigError("unknown optimizer kind: " + kind);
  }
  d.learning_rate = j.value("learning_rate", d.learning_rate);
  d.momentum = j.value("momentum", d.momentum);
  d.beta1 = j.value("beta1", d.beta1);
  d.beta2 = j.value("beta2", d.beta2);
  d.epsilon = j.value("epsilon", d.epsilon);
  d.clip_norm = j.value("clip_norm", d.clip_norm);
  c = d;
}

void Optimizer::step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads) {
  if (params.size() != grads.size()) throw SizeError("parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.emplace_back(p->rows, p->cols);
      if (config_.kind == OptimizerKind::Adam) v_.emplace_back(p->rows, p->cols);
    }
  }
  if (m_.size() != params.size()) throw SizeError("optimizer reused with a different parameter list");

  double scale = 1.0;
  if (config_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const Matrix* g : grads) {
      for (double x : g->data) sq += x * x;
    }
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) scale = config_.clip_norm / norm;
  }

  ++steps_;
  const double lr = config_.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = *grads[i];
    if (p.data.size() != g.data.size()) throw SizeError("parameter/gradient shape mismatch");
    auto& m = m_[i].data;
    if (config_.kind == OptimizerKind::SgdMomentum) {
      for (std::size_t k = 0; k < p.data.size(); ++k) {
        m[k] = config_.momentum * m[k] + scale * g.data[k];
        p.data[k] -= lr * m[k];
      }
    } else {
      auto& v = v_[i].data;
      const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
      const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
      for (std::size_t k = 0; k < p.data.size(); ++k) {
        const double gk = scale * g.data[k];
        m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * gk;
        v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * gk * gk;
        p.data[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.epsilon);
      }
    }
  }
}

}  // namespace dfm
