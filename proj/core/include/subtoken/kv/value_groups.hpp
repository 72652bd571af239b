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

namespace subtoken::kv {

/// Splits v into S contiguous slices of width v.size() / S.
/// Throws ConfigError when S does not divide the width.
std::vector<std::span<const double>> partition_value(std::span<const double> v, std::size_t groups);

/// Linear value-group router: one score per group from the token representation.
struct GroupRouter {
    Tensor w;  // [S x d_model]
    Tensor b;  // [S]

    GroupRouter() = default;
    GroupRouter(std::size_t groups, std::size_t d_model);

    std::size_t groups() const { return b.size(); }

    /// g(x) for each row of x[T x d_model] -> [T x S].
    Tensor scores(const Tensor& x) const;

    void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Top-K groups of g(x); ties go to the lower index. Result sorted ascending.
std::vector<std::size_t> select_keep_groups(std::span<const double> x, const GroupRouter& router, std::size_t k);

/// Predicts a full per-head value vector from its kept groups.
///
/// Input row: the value with dropped groups zeroed, followed by the S-wide
/// binary keep indicator. Hidden width defaults to 2 * d_head.
class Reconstructor {
public:
    Reconstructor() = default;
    Reconstructor(std::size_t d_head, std::size_t groups, std::size_t hidden);

    void init(Rng& rng, double stddev) { mlp_.init(rng, stddev); }

    std::size_t d_head() const { return d_head_; }
    std::size_t groups() const { return groups_; }

    /// Builds reconstructor input rows for v[N x d_head] and keep bits [N x S].
    Tensor make_input(const Tensor& v, std::span<const std::uint8_t> keep) const;

    /// Full-value prediction for each input row -> [N x d_head].
    Tensor predict(const Tensor& input, TwoLayerMlp::Cache* cache = nullptr) const {
        return mlp_.forward(input, cache);
    }

    TwoLayerMlp& mlp() { return mlp_; }
    const TwoLayerMlp& mlp() const { return mlp_; }

private:
    std::size_t d_head_ = 0;
    std::size_t groups_ = 0;
    TwoLayerMlp mlp_;
};

/// Assembled value for one head: kept groups copied from v, dropped groups
/// taken from the reconstructor. Throws ArgumentError on an empty keep set;
/// a full keep set bypasses the reconstructor and returns v unchanged.
std::vector<double> reconstruct_value(std::span<const double> v, std::span<const std::size_t> keep,
                                      const Reconstructor& recon);

/// Per-layer state of sequence-level value routing.
struct ValueRoutingCache {
    Tensor router_input;            // [T x d_model]
    Tensor router_scores;           // [T x S]
    std::vector<std::uint8_t> keep; // [T x S]
    TwoLayerMlp::Cache recon;       // rows are (token, head) pairs
    Tensor vhat;                    // [T*H x d_head]
    bool bypass = false;
};

/// Routes every head of every token: v[T x H*d_head] -> v~ of the same shape.
/// With keep == S the result is v itself and the reconstructor is skipped.
Tensor route_values(const Tensor& router_input, const Tensor& v, std::size_t n_heads, std::size_t keep,
                    const GroupRouter& router, const Reconstructor& recon, ValueRoutingCache* cache);

/// dL/dv given dL/dv~. Flows through the reconstructor's input but never
/// touches its parameters.
Tensor route_values_backward(const ValueRoutingCache& cache, Reconstructor& recon, const Tensor& dvtilde,
                             std::size_t n_heads);

}  // namespace subtoken::kv
