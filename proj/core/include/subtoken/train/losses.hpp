// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

#include "subtoken/numerics/tensor.hpp"

namespace subtoken::train {

/// Mean next-token cross-entropy of logits[T x V] against targets[T].
/// Writes dL/dlogits into `dlogits` when non-null.
double loss_lm(const Tensor& logits, std::span<const std::size_t> targets, Tensor* dlogits = nullptr);

struct AuxLoss {
    double total = 0.0;
    double reconstruction = 0.0;  // mean (v_hat - v)^2 over every entry
    double coupling = 0.0;        // mean over (t, s) of (1 - p_ts) * e_ts
};

struct AuxGrads {
    Tensor dvhat;    // like v_hat
    Tensor dscores;  // like router_scores
};

/// Cache-side objective for one layer.
///
/// v_hat[T*H x d_head] holds the reconstructor's full-value prediction for
/// every (token, head) row under the hard keep set; v[T x H*d_head] is the
/// true value (a constant here). e_ts is the squared error of group s of
/// token t averaged over heads and group entries, and p = softmax(scores).
/// The coupling term lets the router learn which groups are cheap to drop.
AuxLoss loss_aux(const Tensor& v_hat, const Tensor& v, const Tensor& router_scores, std::size_t n_heads,
                 AuxGrads* grads = nullptr);

/// Switch-style balance S * sum_s f_s * mean_t p_ts, where f_s is the
/// fraction of rows keeping group s and p = softmax(scores). Writes
/// dL/dscores (keep fractions held constant) when non-null.
double loss_load_balance(const Tensor& router_scores, std::span<const std::size_t> keep_counts,
                         Tensor* dscores = nullptr);

/// Same quantity from row-stochastic probabilities directly.
double load_balance_from_probs(const Tensor& router_probs, std::span<const std::size_t> keep_counts);

/// Mean squared error over all entries; dL/dpred into `dpred` when non-null.
double loss_predictor(const Tensor& pred, const Tensor& target, Tensor* dpred = nullptr);

}  // namespace subtoken::train
