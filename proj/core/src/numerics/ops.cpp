// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "numerics/eigen_view.hpp"
#include "subtoken/error.hpp"

namespace subtoken {

using detail::view;

namespace {

void require_2d(const Tensor& t, std::string_view what) {
    if (t.rank() != 2) throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_str(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul lhs");
    require_2d(b, "matmul rhs");
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    Tensor y({a.rows(), b.cols()});
    view(y).noalias() = view(a) * view(b);
    return y;
}

MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dy) {
    require_shape(dy, {a.rows(), b.cols()}, "matmul_backward dy");
    MatmulGrads g{Tensor(a.shape()), Tensor(b.shape())};
    view(g.da).noalias() = view(dy) * view(b).transpose();
    view(g.db).noalias() = view(a).transpose() * view(dy);
    return g;
}

Tensor linear(const Tensor& x, const Tensor& w) {
    require_2d(w, "linear weight");
    if (x.cols() != w.cols()) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                             shape_str(w.shape()));
    }
    Tensor y({x.rows(), w.rows()});
    view(y).noalias() = view(x) * view(w).transpose();
    return y;
}

void add_bias(Tensor& y, std::span<const double> bias) {
    if (bias.size() != y.cols()) throw DimensionError("add_bias: bias length mismatch");
    view(y).rowwise() += detail::ConstVecView(bias.data(), bias.size()).transpose();
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, std::span<double> dw) {
    if (dx != nullptr) {
        require_shape(*dx, x.shape(), "linear_backward dx");
        view(*dx).noalias() += view(dy) * view(w);
    }
    if (!dw.empty()) {
        detail::MatView(dw.data(), w.rows(), w.cols()).noalias() += view(dy).transpose() * view(x);
    }
}

void bias_backward(const Tensor& dy, std::span<double> db) {
    if (db.empty()) return;
    detail::VecView(db.data(), db.size()) += view(dy).colwise().sum().transpose();
}

void softmax_inplace(std::span<double> row) {
    if (row.empty()) return;
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& v : row) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : row) v /= sum;
}

Tensor softmax_rows(const Tensor& x) {
    require_2d(x, "softmax_rows");
    x.check_finite("softmax_rows input");
    Tensor y = x;
    for (std::size_t r = 0; r < y.rows(); ++r) softmax_inplace(y.row(r));
    return y;
}

Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy) {
    require_shape(dy, y.shape(), "softmax_rows_backward dy");
    Tensor dx(y.shape());
    for (std::size_t r = 0; r < y.rows(); ++r) {
        auto yr = y.row(r);
        auto gr = dy.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
        auto out = dx.row(r);
        for (std::size_t c = 0; c < yr.size(); ++c) out[c] = yr[c] * (gr[c] - dot);
    }
    return dx;
}

namespace {
constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCubic = 0.044715;
}  // namespace

double gelu(double x) {
    const double u = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative(double x) {
    const double u = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
    const double t = std::tanh(u);
    const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

Tensor gelu(const Tensor& x) {
    Tensor y(x.shape());
    auto in = x.data();
    auto out = y.data();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = gelu(in[i]);
    return y;
}

Tensor gelu_backward(const Tensor& x, const Tensor& dy) {
    require_shape(dy, x.shape(), "gelu_backward dy");
    Tensor dx(x.shape());
    auto in = x.data();
    auto g = dy.data();
    auto out = dx.data();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = g[i] * gelu_derivative(in[i]);
    return dx;
}

std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k) {
    if (k < 1 || k > scores.size()) {
        throw ArgumentError("topk_indices: K=" + std::to_string(k) + " outside [1, " +
                            std::to_string(scores.size()) + "]");
    }
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::vector<double> group_l2_norms(std::span<const double> v, std::size_t groups) {
    if (groups == 0 || v.size() % groups != 0) {
        throw ConfigError("group_l2_norms: " + std::to_string(groups) + " groups do not divide width " +
                          std::to_string(v.size()));
    }
    const std::size_t width = v.size() / groups;
    std::vector<double> norms(groups, 0.0);
    for (std::size_t g = 0; g < groups; ++g) {
        double sq = 0.0;
        for (std::size_t i = g * width; i < (g + 1) * width; ++i) sq += v[i] * v[i];
        norms[g] = std::sqrt(sq);
    }
    return norms;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, LayerNormCache* cache) {
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    if (gamma.size() != d || beta.size() != d) throw DimensionError("layer_norm: gain/shift width mismatch");
    Tensor y(x.shape());
    Tensor xhat(x.shape());
    std::vector<double> inv_std(n);
    for (std::size_t r = 0; r < n; ++r) {
        auto xr = x.row(r);
        double mean = 0.0;
        for (double v : xr) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : xr) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_std[r] = is;
        auto hr = xhat.row(r);
        auto yr = y.row(r);
        for (std::size_t c = 0; c < d; ++c) {
            hr[c] = (xr[c] - mean) * is;
            yr[c] = hr[c] * gamma[c] + beta[c];
        }
    }
    if (cache != nullptr) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

Tensor layer_norm_backward(const LayerNormCache& cache, const Tensor& gamma, const Tensor& dy,
                           std::span<double> dgamma, std::span<double> dbeta) {
    const auto& xhat = cache.xhat;
    require_shape(dy, xhat.shape(), "layer_norm_backward dy");
    const std::size_t n = xhat.rows();
    const std::size_t d = xhat.cols();
    Tensor dx(xhat.shape());
    std::vector<double> dxhat(d);
    for (std::size_t r = 0; r < n; ++r) {
        auto hr = xhat.row(r);
        auto gr = dy.row(r);
        double sum = 0.0;
        double sum_h = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            dxhat[c] = gr[c] * gamma[c];
            sum += dxhat[c];
            sum_h += dxhat[c] * hr[c];
            if (!dgamma.empty()) dgamma[c] += gr[c] * hr[c];
            if (!dbeta.empty()) dbeta[c] += gr[c];
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        auto out = dx.row(r);
        for (std::size_t c = 0; c < d; ++c) {
            out[c] = cache.inv_std[r] * (dxhat[c] - inv_d * sum - hr[c] * inv_d * sum_h);
        }
    }
    return dx;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) throw DimensionError("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace subtoken
