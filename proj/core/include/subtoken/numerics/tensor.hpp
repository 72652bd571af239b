// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace subtoken {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major f64 array with an optional same-shape gradient buffer.
///
/// Every dimension is positive and every entry is finite at construction.
/// Tensors are plain values: copying duplicates data and gradient.
class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor of the given shape.
    explicit Tensor(Shape shape);

    /// Takes ownership of `data`; throws DimensionError on a length mismatch
    /// and NumericError on a non-finite entry.
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor filled(Shape shape, double value);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::initializer_list<double> values);
    static Tensor vector(std::span<const double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    std::size_t dim(std::size_t axis) const;

    /// Leading dimension; for a 2-D tensor the row count.
    std::size_t rows() const { return dim(0); }
    /// Product of the trailing dimensions.
    std::size_t cols() const;

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double* raw() noexcept { return data_.data(); }
    const double* raw() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<double> row(std::size_t r);
    std::span<const double> row(std::size_t r) const;

    /// Same data viewed under a different shape of equal element count.
    Tensor reshaped(Shape shape) const;

    bool has_grad() const noexcept { return !grad_.empty(); }
    /// Allocates a zeroed gradient buffer if none exists.
    void enable_grad();
    /// Releases the gradient buffer (used when freezing).
    void drop_grad() noexcept;
    void zero_grad() noexcept;
    std::span<double> grad() noexcept { return grad_; }
    std::span<const double> grad() const noexcept { return grad_; }

    /// Throws NumericError naming `what` and the first bad index.
    void check_finite(std::string_view what) const;
    void check_grad_finite(std::string_view what) const;

    void fill(double value) noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
    std::vector<double> grad_;
};

/// Throws DimensionError unless `t` has exactly `expected` shape.
void require_shape(const Tensor& t, const Shape& expected, std::string_view what);

}  // namespace subtoken
