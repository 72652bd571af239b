// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "subtoken/numerics/mlp.hpp"
#include "subtoken/numerics/rng.hpp"
#include "subtoken/numerics/tensor.hpp"

namespace subtoken::lora {

struct RoutedLoraConfig {
    std::size_t subspaces = 4;
    std::size_t top_k = 2;
    std::size_t rank = 4;
    double alpha = 8.0;
    double dropout = 0.05;

    double scaling() const { return alpha / static_cast<double>(rank); }
    /// Throws ConfigError unless 1 <= top_k <= subspaces, rank >= 1 and 0 <= dropout < 1.
    void validate() const;
};

/// a(x) = W_r x + b_r.
std::vector<double> route_scores(std::span<const double> x, const Tensor& router_w, const Tensor& router_b);

/// Softmax over the top-K scores only; every other entry is exactly zero.
/// Throws ArgumentError unless 1 <= K <= scores.size().
std::vector<double> sparse_topk_normalize(std::span<const double> scores, std::size_t k);

/// A frozen projection adapted by a token-routed mixture of S low-rank updates:
///
///   y = W x + scaling * sum_{s in topK(a(x))} r_s(x) * B_s A_s dropout(x)
///
/// Backward treats the selected set as fixed and differentiates through the
/// normalized weights r_s on that set.
class RoutedLora {
public:
    struct Cache {
        Tensor x;
        Tensor x_lora;                       // x after dropout
        Tensor scores;                       // [T x S]
        Tensor weights;                      // [T x S], zero off the active set
        std::vector<std::uint8_t> selected;  // [T x S]
        std::vector<Tensor> u;               // per subspace: x_lora A_s^T  [T x r]
        std::vector<Tensor> z;               // per subspace: u_s B_s^T     [T x d_out]
        std::vector<double> dropout_scale;   // [T x d_in] or empty
    };

    RoutedLora() = default;
    RoutedLora(const RoutedLoraConfig& config, std::size_t d_in, std::size_t d_out);

    /// A_s ~ N(0, 0.02), B_s = 0, router weights ~ N(0, 0.02), router bias 0.
    void init(Rng& rng);

    const RoutedLoraConfig& config() const { return config_; }
    std::size_t d_in() const { return router_w.cols(); }
    std::size_t d_out() const { return b.front().rows(); }

    /// x[T x d_in] with frozen w[d_out x d_in] -> [T x d_out]. Dropout on the
    /// low-rank path is applied only when `training` and an rng is given.
    Tensor forward(const Tensor& x, const Tensor& w, bool training, Rng* rng, Cache* cache) const;

    /// Returns dL/dx (frozen path included). Accumulates adapter gradients
    /// when their slots exist and `dw` when non-empty.
    Tensor backward(const Cache& cache, const Tensor& w, const Tensor& dy, std::span<double> dw);

    /// Adds dL/dscores (e.g. from a load-balance term) into the router
    /// gradients, treating x as a constant.
    void router_backward(const Cache& cache, const Tensor& dscores);

    void visit(const std::string& prefix, const ParamVisitor& fn);
    void cvisit(const std::string& prefix, const ConstParamVisitor& fn) const;

    std::vector<Tensor> a;  // S x [r x d_in]
    std::vector<Tensor> b;  // S x [d_out x r]
    Tensor router_w;        // [S x d_in]
    Tensor router_b;        // [S]

private:
    RoutedLoraConfig config_;
};

/// Single-token form of RoutedLora::forward without dropout.
std::vector<double> routed_projection(std::span<const double> x, const Tensor& w, const RoutedLora& params);

}  // namespace subtoken::lora
