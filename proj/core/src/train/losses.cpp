// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/train/losses.hpp"

#include <cmath>
#include <limits>

#include "subtoken/error.hpp"
#include "subtoken/numerics/ops.hpp"

namespace subtoken::train {

double loss_lm(const Tensor& logits, std::span<const std::size_t> targets, Tensor* dlogits) {
    if (logits.rank() != 2 || logits.rows() != targets.size()) {
        throw DimensionError("loss_lm: logits " + shape_str(logits.shape()) + " vs " +
                             std::to_string(targets.size()) + " targets");
    }
    const std::size_t rows = logits.rows();
    const std::size_t vocab = logits.cols();
    if (dlogits != nullptr) *dlogits = Tensor(logits.shape());
    double total = 0.0;
    std::vector<double> p(vocab);
    for (std::size_t t = 0; t < rows; ++t) {
        if (targets[t] >= vocab) throw ArgumentError("loss_lm: target id out of range");
        auto row = logits.row(t);
        std::copy(row.begin(), row.end(), p.begin());
        softmax_inplace(p);
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : row) mx = std::max(mx, v);
        double sum = 0.0;
        for (double v : row) sum += std::exp(v - mx);
        total += mx + std::log(sum) - row[targets[t]];
        if (dlogits != nullptr) {
            auto g = dlogits->row(t);
            for (std::size_t c = 0; c < vocab; ++c) g[c] = p[c] / static_cast<double>(rows);
            g[targets[t]] -= 1.0 / static_cast<double>(rows);
        }
    }
    return total / static_cast<double>(rows);
}

AuxLoss loss_aux(const Tensor& v_hat, const Tensor& v, const Tensor& router_scores, std::size_t n_heads,
                 AuxGrads* grads) {
    const std::size_t tokens = v.rows();
    const std::size_t groups = router_scores.cols();
    if (n_heads == 0 || v.cols() % n_heads != 0) throw DimensionError("loss_aux: heads do not divide value width");
    const std::size_t dh = v.cols() / n_heads;
    if (router_scores.rows() != tokens || v_hat.rows() != tokens * n_heads || v_hat.cols() != dh) {
        throw DimensionError("loss_aux: v_hat " + shape_str(v_hat.shape()) + ", v " + shape_str(v.shape()) +
                             ", scores " + shape_str(router_scores.shape()) + " are inconsistent");
    }
    if (groups == 0 || dh % groups != 0) throw ConfigError("loss_aux: groups do not divide d_head");
    const std::size_t width = dh / groups;
    const double n_entries = static_cast<double>(v.size());
    const double n_pairs = static_cast<double>(tokens * groups);
    const double per_group = static_cast<double>(n_heads * width);

    const Tensor probs = softmax_rows(router_scores);
    Tensor e({tokens, groups});
    AuxLoss out;
    for (std::size_t t = 0; t < tokens; ++t) {
        auto vt = v.row(t);
        for (std::size_t h = 0; h < n_heads; ++h) {
            auto pred = v_hat.row(t * n_heads + h);
            for (std::size_t i = 0; i < dh; ++i) {
                const double diff = pred[i] - vt[h * dh + i];
                out.reconstruction += diff * diff;
                e(t, i / width) += diff * diff;
            }
        }
    }
    out.reconstruction /= n_entries;
    for (std::size_t t = 0; t < tokens; ++t) {
        for (std::size_t g = 0; g < groups; ++g) {
            e(t, g) /= per_group;
            out.coupling += (1.0 - probs(t, g)) * e(t, g);
        }
    }
    out.coupling /= n_pairs;
    out.total = out.reconstruction + out.coupling;

    if (grads != nullptr) {
        grads->dvhat = Tensor(v_hat.shape());
        for (std::size_t t = 0; t < tokens; ++t) {
            auto vt = v.row(t);
            for (std::size_t h = 0; h < n_heads; ++h) {
                auto pred = v_hat.row(t * n_heads + h);
                auto g = grads->dvhat.row(t * n_heads + h);
                for (std::size_t i = 0; i < dh; ++i) {
                    const double diff = pred[i] - vt[h * dh + i];
                    const double w = 1.0 / n_entries + (1.0 - probs(t, i / width)) / (n_pairs * per_group);
                    g[i] = 2.0 * diff * w;
                }
            }
        }
        Tensor dprobs({tokens, groups});
        for (std::size_t i = 0; i < e.size(); ++i) dprobs[i] = -e[i] / n_pairs;
        grads->dscores = softmax_rows_backward(probs, dprobs);
    }
    return out;
}

double load_balance_from_probs(const Tensor& router_probs, std::span<const std::size_t> keep_counts) {
    const std::size_t rows = router_probs.rows();
    const std::size_t groups = router_probs.cols();
    if (keep_counts.size() != groups) throw DimensionError("load_balance: keep counts do not match groups");
    double total = 0.0;
    for (std::size_t s = 0; s < groups; ++s) {
        double p = 0.0;
        for (std::size_t t = 0; t < rows; ++t) p += router_probs(t, s);
        const double f = static_cast<double>(keep_counts[s]) / static_cast<double>(rows);
        total += f * p / static_cast<double>(rows);
    }
    return static_cast<double>(groups) * total;
}

double loss_load_balance(const Tensor& router_scores, std::span<const std::size_t> keep_counts, Tensor* dscores) {
    const Tensor probs = softmax_rows(router_scores);
    const double value = load_balance_from_probs(probs, keep_counts);
    if (dscores != nullptr) {
        const std::size_t rows = probs.rows();
        const std::size_t groups = probs.cols();
        Tensor dprobs(probs.shape());
        const double n = static_cast<double>(rows);
        for (std::size_t t = 0; t < rows; ++t) {
            for (std::size_t s = 0; s < groups; ++s) {
                dprobs(t, s) = static_cast<double>(groups) * static_cast<double>(keep_counts[s]) / (n * n);
            }
        }
        *dscores = softmax_rows_backward(probs, dprobs);
    }
    return value;
}

double loss_predictor(const Tensor& pred, const Tensor& target, Tensor* dpred) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("loss_predictor: prediction " + shape_str(pred.shape()) + " vs target " +
                             shape_str(target.shape()));
    }
    const double n = static_cast<double>(pred.size());
    double total = 0.0;
    if (dpred != nullptr) *dpred = Tensor(pred.shape());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        total += d * d;
        if (dpred != nullptr) (*dpred)[i] = 2.0 * d / n;
    }
    return total / n;
}

}  // namespace subtoken::train
