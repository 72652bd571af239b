// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>

#include "subtoken/numerics/mlp.hpp"
#include "subtoken/numerics/rng.hpp"
#include "subtoken/numerics/tensor.hpp"

namespace subtoken::qa {

inline constexpr std::size_t kPredictorHidden = 256;

/// Row-wise d_model -> 256 -> outputs GELU MLP regressing standardized
/// relevance targets. With S outputs it scores value groups; with one output
/// it predicts token-level received attention mass.
///
/// The per-output mean and std of the training targets are stored alongside
/// the weights so raw-scale scores can be recovered for cross-group ranking.
class RelevancePredictor {
public:
    RelevancePredictor() = default;
    RelevancePredictor(std::size_t d_model, std::size_t outputs, std::size_t hidden = kPredictorHidden);

    void init(Rng& rng, double stddev = 0.02) { mlp.init(rng, stddev); }

    std::size_t outputs() const { return mlp.out_features(); }

    /// Standardized-space prediction for h[N x d_model].
    Tensor predict_normalized(const Tensor& h, TwoLayerMlp::Cache* cache = nullptr) const;
    /// Prediction mapped back to the raw target scale: y * std + mean.
    Tensor predict(const Tensor& h) const;

    /// Sets mean/std per output column from raw targets[N x outputs]. A
    /// column with zero spread gets std 1.
    void fit_normalization(const Tensor& targets);
    Tensor normalize(const Tensor& targets) const;

    void visit(const std::string& prefix, const ParamVisitor& fn);
    void cvisit(const std::string& prefix, const ConstParamVisitor& fn) const;

    TwoLayerMlp mlp;
    Tensor mean;    // [outputs]
    Tensor stddev;  // [outputs]
};

/// The standardized-space group scores used for training and grad checks.
inline Tensor predict_scores(const Tensor& h, const RelevancePredictor& params) {
    return params.predict_normalized(h);
}

}  // namespace subtoken::qa
