// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/lora/routed_lora.hpp"

#include <cmath>

#include "numerics/eigen_view.hpp"
#include "subtoken/error.hpp"
#include "subtoken/numerics/ops.hpp"

namespace subtoken::lora {

using detail::view;

void RoutedLoraConfig::validate() const {
    if (subspaces == 0 || top_k < 1 || top_k > subspaces) {
        throw ConfigError("routed LoRA: need 1 <= K <= S, got K=" + std::to_string(top_k) +
                          " S=" + std::to_string(subspaces));
    }
    if (rank < 1) throw ConfigError("routed LoRA: rank must be at least 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("routed LoRA: dropout must lie in [0, 1)");
}

std::vector<double> route_scores(std::span<const double> x, const Tensor& router_w, const Tensor& router_b) {
    if (x.size() != router_w.cols() || router_b.size() != router_w.rows()) {
        throw DimensionError("route_scores: router shape " + shape_str(router_w.shape()) +
                             " does not match input width " + std::to_string(x.size()));
    }
    std::vector<double> s(router_w.rows());
    for (std::size_t i = 0; i < s.size(); ++i) {
        double acc = router_b[i];
        auto wr = router_w.row(i);
        for (std::size_t j = 0; j < x.size(); ++j) acc += wr[j] * x[j];
        s[i] = acc;
    }
    return s;
}

std::vector<double> sparse_topk_normalize(std::span<const double> scores, std::size_t k) {
    const auto idx = topk_indices(scores, k);
    double mx = scores[idx.front()];
    for (auto i : idx) mx = std::max(mx, scores[i]);
    std::vector<double> w(scores.size(), 0.0);
    double sum = 0.0;
    for (auto i : idx) {
        w[i] = std::exp(scores[i] - mx);
        sum += w[i];
    }
    for (auto i : idx) w[i] /= sum;
    return w;
}

RoutedLora::RoutedLora(const RoutedLoraConfig& config, std::size_t d_in, std::size_t d_out)
    : router_w({config.subspaces, d_in}), router_b({config.subspaces}), config_(config) {
    config_.validate();
    a.reserve(config.subspaces);
    b.reserve(config.subspaces);
    for (std::size_t s = 0; s < config.subspaces; ++s) {
        a.emplace_back(Shape{config.rank, d_in});
        b.emplace_back(Shape{d_out, config.rank});
    }
}

void RoutedLora::init(Rng& rng) {
    for (auto& as : a) {
        for (double& v : as.data()) v = rng.normal(0.0, 0.02);
    }
    for (auto& bs : b) bs.fill(0.0);
    for (double& v : router_w.data()) v = rng.normal(0.0, 0.02);
    router_b.fill(0.0);
}

Tensor RoutedLora::forward(const Tensor& x, const Tensor& w, bool training, Rng* rng, Cache* cache) const {
    const std::size_t tokens = x.rows();
    const std::size_t n_sub = config_.subspaces;
    Tensor y = linear(x, w);

    Tensor scores = linear(x, router_w);
    add_bias(scores, router_b.data());
    Tensor weights({tokens, n_sub});
    std::vector<std::uint8_t> selected(tokens * n_sub, 0);
    for (std::size_t t = 0; t < tokens; ++t) {
        const auto r = sparse_topk_normalize(scores.row(t), config_.top_k);
        auto wr = weights.row(t);
        for (std::size_t s = 0; s < n_sub; ++s) wr[s] = r[s];
        for (auto s : topk_indices(scores.row(t), config_.top_k)) selected[t * n_sub + s] = 1;
    }

    Tensor x_lora = x;
    std::vector<double> drop_scale;
    if (training && rng != nullptr && config_.dropout > 0.0) {
        drop_scale.resize(x.size());
        const double keep_scale = 1.0 / (1.0 - config_.dropout);
        auto xl = x_lora.data();
        for (std::size_t i = 0; i < xl.size(); ++i) {
            drop_scale[i] = rng->uniform() < config_.dropout ? 0.0 : keep_scale;
            xl[i] *= drop_scale[i];
        }
    }

    const double scale = config_.scaling();
    std::vector<Tensor> us;
    std::vector<Tensor> zs;
    us.reserve(n_sub);
    zs.reserve(n_sub);
    auto yv = view(y);
    for (std::size_t s = 0; s < n_sub; ++s) {
        Tensor u = linear(x_lora, a[s]);
        Tensor z = linear(u, b[s]);
        const auto wcol = view(weights).col(static_cast<Eigen::Index>(s));
        yv.noalias() += scale * (wcol.asDiagonal() * view(z));
        us.push_back(std::move(u));
        zs.push_back(std::move(z));
    }

    if (cache != nullptr) {
        cache->x = x;
        cache->x_lora = std::move(x_lora);
        cache->scores = std::move(scores);
        cache->weights = std::move(weights);
        cache->selected = std::move(selected);
        cache->u = std::move(us);
        cache->z = std::move(zs);
        cache->dropout_scale = std::move(drop_scale);
    }
    return y;
}

Tensor RoutedLora::backward(const Cache& cache, const Tensor& w, const Tensor& dy, std::span<double> dw) {
    const std::size_t tokens = cache.x.rows();
    const std::size_t n_sub = config_.subspaces;
    const double scale = config_.scaling();
    const bool adapter_grads = router_w.has_grad();

    Tensor dx(cache.x.shape());
    linear_backward(cache.x, w, dy, &dx, dw);

    Tensor dx_lora(cache.x.shape());
    Tensor dscores({tokens, n_sub});
    const auto dyv = view(dy);
    for (std::size_t s = 0; s < n_sub; ++s) {
        const auto wcol = view(cache.weights).col(static_cast<Eigen::Index>(s));
        detail::RowMat g = scale * (wcol.asDiagonal() * dyv);
        detail::RowMat du = g * view(b[s]);
        if (adapter_grads) {
            detail::grad_view(b[s]).noalias() += g.transpose() * view(cache.u[s]);
            detail::grad_view(a[s]).noalias() += du.transpose() * view(cache.x_lora);
        }
        view(dx_lora).noalias() += du * view(a[s]);
        // dL/dr_s for the active set
        const auto zv = view(cache.z[s]);
        for (std::size_t t = 0; t < tokens; ++t) {
            if (!cache.selected[t * n_sub + s]) continue;
            dscores(t, s) = scale * dyv.row(static_cast<Eigen::Index>(t)).dot(zv.row(static_cast<Eigen::Index>(t)));
        }
    }
    // softmax backward restricted to the active set
    for (std::size_t t = 0; t < tokens; ++t) {
        auto wr = cache.weights.row(t);
        auto dr = dscores.row(t);
        double dot = 0.0;
        for (std::size_t s = 0; s < n_sub; ++s) {
            if (cache.selected[t * n_sub + s]) dot += wr[s] * dr[s];
        }
        for (std::size_t s = 0; s < n_sub; ++s) {
            dr[s] = cache.selected[t * n_sub + s] ? wr[s] * (dr[s] - dot) : 0.0;
        }
    }
    if (adapter_grads) {
        linear_backward(cache.x, router_w, dscores, &dx, router_w.grad());
        bias_backward(dscores, router_b.grad());
    } else {
        linear_backward(cache.x, router_w, dscores, &dx, {});
    }

    if (cache.dropout_scale.empty()) {
        view(dx) += view(dx_lora);
    } else {
        auto out = dx.data();
        auto in = dx_lora.data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += in[i] * cache.dropout_scale[i];
    }
    return dx;
}

void RoutedLora::router_backward(const Cache& cache, const Tensor& dscores) {
    if (!router_w.has_grad()) return;
    linear_backward(cache.x, router_w, dscores, nullptr, router_w.grad());
    bias_backward(dscores, router_b.grad());
}

void RoutedLora::visit(const std::string& prefix, const ParamVisitor& fn) {
    for (std::size_t s = 0; s < a.size(); ++s) {
        fn(prefix + "a" + std::to_string(s), a[s]);
        fn(prefix + "b" + std::to_string(s), b[s]);
    }
    fn(prefix + "router_w", router_w);
    fn(prefix + "router_b", router_b);
}

void RoutedLora::cvisit(const std::string& prefix, const ConstParamVisitor& fn) const {
    for (std::size_t s = 0; s < a.size(); ++s) {
        fn(prefix + "a" + std::to_string(s), a[s]);
        fn(prefix + "b" + std::to_string(s), b[s]);
    }
    fn(prefix + "router_w", router_w);
    fn(prefix + "router_b", router_b);
}

std::vector<double> routed_projection(std::span<const double> x, const Tensor& w, const RoutedLora& params) {
    const Tensor xt = Tensor::vector(x).reshaped({1, x.size()});
    const Tensor y = params.forward(xt, w, false, nullptr, nullptr);
    return std::vector<double>(y.data().begin(), y.data().end());
}

}  // namespace subtoken::lora
