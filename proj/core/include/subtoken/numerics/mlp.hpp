// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "subtoken/numerics/rng.hpp"
#include "subtoken/numerics/tensor.hpp"

namespace subtoken {

using ParamVisitor = std::function<void(const std::string& name, Tensor& param)>;
using ConstParamVisitor = std::function<void(const std::string& name, const Tensor& param)>;

/// in -> hidden (GELU) -> out, applied row-wise to an [n x in] batch.
class TwoLayerMlp {
public:
    struct Cache {
        Tensor input;
        Tensor pre;
        Tensor act;
    };

    TwoLayerMlp() = default;
    TwoLayerMlp(std::size_t in, std::size_t hidden, std::size_t out);

    /// Gaussian weights with the given std, zero biases.
    void init(Rng& rng, double stddev);

    std::size_t in_features() const { return w1.cols(); }
    std::size_t hidden_features() const { return w1.rows(); }
    std::size_t out_features() const { return w2.rows(); }

    Tensor forward(const Tensor& x, Cache* cache = nullptr) const;

    /// Accumulates parameter gradients when `accumulate_params` is set (the
    /// parameters must have gradient slots). Returns dL/dx when
    /// `want_input_grad`, otherwise an empty tensor.
    Tensor backward(const Cache& cache, const Tensor& dy, bool accumulate_params, bool want_input_grad);

    void visit(const std::string& prefix, const ParamVisitor& fn);
    void cvisit(const std::string& prefix, const ConstParamVisitor& fn) const;

    Tensor w1;
    Tensor b1;
    Tensor w2;
    Tensor b2;
};

}  // namespace subtoken
