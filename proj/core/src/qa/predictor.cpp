// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/qa/predictor.hpp"

#include <cmath>

#include "subtoken/error.hpp"

namespace subtoken::qa {

RelevancePredictor::RelevancePredictor(std::size_t d_model, std::size_t outputs, std::size_t hidden)
    : mlp(d_model, hidden, outputs), mean({outputs}), stddev(Tensor::filled({outputs}, 1.0)) {}

Tensor RelevancePredictor::predict_normalized(const Tensor& h, TwoLayerMlp::Cache* cache) const {
    return mlp.forward(h, cache);
}

Tensor RelevancePredictor::predict(const Tensor& h) const {
    Tensor y = predict_normalized(h);
    const std::size_t n = outputs();
    for (std::size_t r = 0; r < y.rows(); ++r) {
        for (std::size_t c = 0; c < n; ++c) y(r, c) = y(r, c) * stddev[c] + mean[c];
    }
    return y;
}

void RelevancePredictor::fit_normalization(const Tensor& targets) {
    const std::size_t n = outputs();
    if (targets.rank() != 2 || targets.cols() != n) {
        throw DimensionError("fit_normalization: targets " + shape_str(targets.shape()) + " for " +
                             std::to_string(n) + " outputs");
    }
    const double rows = static_cast<double>(targets.rows());
    for (std::size_t c = 0; c < n; ++c) {
        double m = 0.0;
        for (std::size_t r = 0; r < targets.rows(); ++r) m += targets(r, c);
        m /= rows;
        double var = 0.0;
        for (std::size_t r = 0; r < targets.rows(); ++r) var += (targets(r, c) - m) * (targets(r, c) - m);
        const double sd = std::sqrt(var / rows);
        mean[c] = m;
        stddev[c] = sd > 0.0 ? sd : 1.0;
    }
}

Tensor RelevancePredictor::normalize(const Tensor& targets) const {
    const std::size_t n = outputs();
    if (targets.rank() != 2 || targets.cols() != n) {
        throw DimensionError("normalize: targets " + shape_str(targets.shape()) + " for " + std::to_string(n) +
                             " outputs");
    }
    Tensor out = targets;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < n; ++c) out(r, c) = (out(r, c) - mean[c]) / stddev[c];
    }
    return out;
}

void RelevancePredictor::visit(const std::string& prefix, const ParamVisitor& fn) {
    mlp.visit(prefix, fn);
    fn(prefix + "target_mean", mean);
    fn(prefix + "target_std", stddev);
}

void RelevancePredictor::cvisit(const std::string& prefix, const ConstParamVisitor& fn) const {
    const_cast<RelevancePredictor*>(this)->visit(prefix, [&](const std::string& name, Tensor& t) { fn(name, t); });
}

}  // namespace subtoken::qa
