// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "subtoken/numerics/tensor.hpp"

namespace subtoken::train {

struct TrainConfig {
    double lr = 5e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t warmup_steps = 100;
    std::size_t total_steps = 2000;
    double lambda_aux = 0.1;
    double lambda_lb = 0.01;
    std::size_t batch = 8;
    std::size_t seq_len = 64;
    std::uint64_t seed = 0;
    std::size_t eval_every = 200;
    /// Validation sequences per evaluation (0 = the whole split).
    std::size_t eval_sequences = 32;

    /// Throws ConfigError on warmup > total, negative weights or a zero batch.
    void validate() const;
};

/// Linear warmup from 0 to lr over warmup_steps, then cosine decay to 0 at
/// total_steps. Throws ArgumentError for step > total_steps.
double lr_at(std::size_t step, const TrainConfig& config);

/// AdamW with decoupled weight decay, applied in the order
///   p -= lr * wd * p;  m, v moments;  p -= lr * m_hat / (sqrt(v_hat) + eps).
class AdamW {
public:
    AdamW(double beta1, double beta2, double eps, double weight_decay);
    explicit AdamW(const TrainConfig& config)
        : AdamW(config.beta1, config.beta2, config.eps, config.weight_decay) {}

    /// Updates every tensor in `params` from its gradient. The list must be
    /// the same (same order, same shapes) on every call.
    void step(const std::vector<Tensor*>& params, double lr);

    std::size_t steps_taken() const { return t_; }

private:
    double beta1_, beta2_, eps_, weight_decay_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace subtoken::train
