// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/train/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "subtoken/error.hpp"

namespace subtoken::train {

void TrainConfig::validate() const {
    if (warmup_steps > total_steps) throw ConfigError("train: warmup_steps exceeds total_steps");
    if (lambda_aux < 0.0 || lambda_lb < 0.0) throw ConfigError("train: loss weights must be non-negative");
    if (lr < 0.0 || weight_decay < 0.0) throw ConfigError("train: lr and weight_decay must be non-negative");
    if (batch == 0 || seq_len == 0) throw ConfigError("train: batch and seq_len must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas outside [0, 1)");
}

double lr_at(std::size_t step, const TrainConfig& config) {
    if (step > config.total_steps) {
        throw ArgumentError("lr_at: step " + std::to_string(step) + " beyond total_steps " +
                            std::to_string(config.total_steps));
    }
    if (step < config.warmup_steps) {
        return config.lr * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
    }
    const std::size_t decay = config.total_steps - config.warmup_steps;
    if (decay == 0) return config.lr;
    const double progress = static_cast<double>(step - config.warmup_steps) / static_cast<double>(decay);
    return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::step(const std::vector<Tensor*>& params, double lr) {
    if (m_.empty()) {
        for (const Tensor* p : params) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }
    if (m_.size() != params.size()) throw ArgumentError("AdamW: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        if (!p.has_grad() || p.size() != m_[i].size()) throw ArgumentError("AdamW: parameter without matching gradient");
        auto data = p.data();
        auto grad = p.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < data.size(); ++k) {
            data[k] -= lr * weight_decay_ * data[k];
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * grad[k];
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * grad[k] * grad[k];
            data[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
        }
    }
}

}  // namespace subtoken::train
