// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include "subtoken/numerics/tensor.hpp"

namespace subtoken::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatView = Eigen::Map<RowMat>;
using ConstMatView = Eigen::Map<const RowMat>;
using StridedView = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedView = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using VecView = Eigen::Map<Eigen::VectorXd>;
using ConstVecView = Eigen::Map<const Eigen::VectorXd>;

inline MatView view(Tensor& t) { return MatView(t.raw(), t.rows(), t.cols()); }
inline ConstMatView view(const Tensor& t) { return ConstMatView(t.raw(), t.rows(), t.cols()); }

inline MatView grad_view(Tensor& t) { return MatView(t.grad().data(), t.rows(), t.cols()); }

/// Column block [col, col + width) of a row-major matrix, e.g. one head.
inline StridedView block(Tensor& t, std::size_t col, std::size_t width) {
    return StridedView(t.raw() + col, t.rows(), width, Eigen::OuterStride<>(t.cols()));
}
inline ConstStridedView block(const Tensor& t, std::size_t col, std::size_t width) {
    return ConstStridedView(t.raw() + col, t.rows(), width, Eigen::OuterStride<>(t.cols()));
}

}  // namespace subtoken::detail
