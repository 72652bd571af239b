// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "subtoken/numerics/tensor.hpp"

namespace subtoken {

// Dense kernels with explicit backward passes. Backward functions either
// return fresh gradients or accumulate (+=) into caller-owned buffers; an
// empty accumulation span means "not needed".

/// a[m x k] * b[k x n].
Tensor matmul(const Tensor& a, const Tensor& b);

struct MatmulGrads {
    Tensor da;
    Tensor db;
};

/// dL/da = dy * b^T, dL/db = a^T * dy.
MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dy);

/// Row-wise linear map: x[n x in] * w[out x in]^T.
Tensor linear(const Tensor& x, const Tensor& w);

/// Adds bias[out] to every row of y[n x out].
void add_bias(Tensor& y, std::span<const double> bias);

/// Backward of linear(): dx += dy * w, dw += dy^T * x.
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, std::span<double> dw);

/// db += column sums of dy.
void bias_backward(const Tensor& dy, std::span<double> db);

/// Numerically stable row softmax (row max subtracted first).
Tensor softmax_rows(const Tensor& x);
void softmax_inplace(std::span<double> row);

/// Given y = softmax_rows(x) and dL/dy, returns dL/dx.
Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy);

/// tanh-approximation GELU.
double gelu(double x);
double gelu_derivative(double x);
Tensor gelu(const Tensor& x);
/// dL/dx given the pre-activation x and dL/dy.
Tensor gelu_backward(const Tensor& x, const Tensor& dy);

/// Indices of the K largest scores; ties go to the lower index; result
/// sorted ascending. Throws ArgumentError unless 1 <= K <= scores.size().
std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k);

/// L2 norm of each of S contiguous equal-width slices of v.
/// Throws ConfigError when S does not divide v.size().
std::vector<double> group_l2_norms(std::span<const double> v, std::size_t groups);

struct LayerNormCache {
    Tensor xhat;
    std::vector<double> inv_std;
};

inline constexpr double kLayerNormEps = 1e-5;

/// Per-row layer normalization with affine gain and shift.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, LayerNormCache* cache);

/// Returns dL/dx; accumulates into dgamma / dbeta when non-empty.
Tensor layer_norm_backward(const LayerNormCache& cache, const Tensor& gamma, const Tensor& dy,
                           std::span<double> dgamma, std::span<double> dbeta);

/// y += alpha * x, elementwise (same size).
void axpy(double alpha, std::span<const double> x, std::span<double> y);

}  // namespace subtoken
