// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/numerics/mlp.hpp"

#include "subtoken/error.hpp"
#include "subtoken/numerics/ops.hpp"

namespace subtoken {

TwoLayerMlp::TwoLayerMlp(std::size_t in, std::size_t hidden, std::size_t out)
    : w1({hidden, in}), b1({hidden}), w2({out, hidden}), b2({out}) {}

void TwoLayerMlp::init(Rng& rng, double stddev) {
    for (Tensor* w : {&w1, &w2}) {
        for (double& v : w->data()) v = rng.normal(0.0, stddev);
    }
    b1.fill(0.0);
    b2.fill(0.0);
}

Tensor TwoLayerMlp::forward(const Tensor& x, Cache* cache) const {
    Tensor pre = linear(x, w1);
    add_bias(pre, b1.data());
    Tensor act = gelu(pre);
    Tensor y = linear(act, w2);
    add_bias(y, b2.data());
    if (cache != nullptr) {
        cache->input = x;
        cache->pre = std::move(pre);
        cache->act = std::move(act);
    }
    return y;
}

Tensor TwoLayerMlp::backward(const Cache& cache, const Tensor& dy, bool accumulate_params, bool want_input_grad) {
    if (accumulate_params && !w1.has_grad()) throw ConfigError("TwoLayerMlp: parameters have no gradient slots");
    Tensor dact(cache.act.shape());
    linear_backward(cache.act, w2, dy, &dact, accumulate_params ? w2.grad() : std::span<double>{});
    if (accumulate_params) bias_backward(dy, b2.grad());
    Tensor dpre = gelu_backward(cache.pre, dact);
    if (accumulate_params) bias_backward(dpre, b1.grad());
    if (!want_input_grad) {
        if (accumulate_params) linear_backward(cache.input, w1, dpre, nullptr, w1.grad());
        return Tensor{};
    }
    Tensor dx(cache.input.shape());
    linear_backward(cache.input, w1, dpre, &dx, accumulate_params ? w1.grad() : std::span<double>{});
    return dx;
}

void TwoLayerMlp::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "w1", w1);
    fn(prefix + "b1", b1);
    fn(prefix + "w2", w2);
    fn(prefix + "b2", b2);
}

void TwoLayerMlp::cvisit(const std::string& prefix, const ConstParamVisitor& fn) const {
    fn(prefix + "w1", w1);
    fn(prefix + "b1", b1);
    fn(prefix + "w2", w2);
    fn(prefix + "b2", b2);
}

}  // namespace subtoken
