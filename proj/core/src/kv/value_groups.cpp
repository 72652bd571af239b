// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/kv/value_groups.hpp"

#include "subtoken/error.hpp"
#include "subtoken/numerics/ops.hpp"

namespace subtoken::kv {

std::vector<std::span<const double>> partition_value(std::span<const double> v, std::size_t groups) {
    if (groups == 0 || v.size() % groups != 0) {
        throw ConfigError("partition_value: " + std::to_string(groups) + " groups do not divide width " +
                          std::to_string(v.size()));
    }
    const std::size_t width = v.size() / groups;
    std::vector<std::span<const double>> out;
    out.reserve(groups);
    for (std::size_t g = 0; g < groups; ++g) out.push_back(v.subspan(g * width, width));
    return out;
}

GroupRouter::GroupRouter(std::size_t groups, std::size_t d_model) : w({groups, d_model}), b({groups}) {}

Tensor GroupRouter::scores(const Tensor& x) const {
    Tensor s = linear(x, w);
    add_bias(s, b.data());
    return s;
}

void GroupRouter::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "w", w);
    fn(prefix + "b", b);
}

std::vector<std::size_t> select_keep_groups(std::span<const double> x, const GroupRouter& router, std::size_t k) {
    const std::size_t groups = router.groups();
    if (k < 1 || k > groups) {
        throw ArgumentError("select_keep_groups: K=" + std::to_string(k) + " outside [1, " +
                            std::to_string(groups) + "]");
    }
    if (x.size() != router.w.cols()) throw DimensionError("select_keep_groups: input width mismatch");
    std::vector<double> scores(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        double acc = router.b[g];
        auto wr = router.w.row(g);
        for (std::size_t i = 0; i < x.size(); ++i) acc += wr[i] * x[i];
        scores[g] = acc;
    }
    return topk_indices(scores, k);
}

Reconstructor::Reconstructor(std::size_t d_head, std::size_t groups, std::size_t hidden)
    : d_head_(d_head), groups_(groups), mlp_(d_head + groups, hidden, d_head) {
    if (groups == 0 || d_head % groups != 0) {
        throw ConfigError("Reconstructor: " + std::to_string(groups) + " groups do not divide d_head " +
                          std::to_string(d_head));
    }
}

Tensor Reconstructor::make_input(const Tensor& v, std::span<const std::uint8_t> keep) const {
    const std::size_t n = v.rows();
    if (v.cols() != d_head_) throw DimensionError("Reconstructor: value width mismatch");
    if (keep.size() != n * groups_) throw DimensionError("Reconstructor: keep bits size mismatch");
    const std::size_t width = d_head_ / groups_;
    Tensor in({n, d_head_ + groups_});
    for (std::size_t r = 0; r < n; ++r) {
        auto src = v.row(r);
        auto dst = in.row(r);
        for (std::size_t g = 0; g < groups_; ++g) {
            const bool on = keep[r * groups_ + g] != 0;
            for (std::size_t i = g * width; i < (g + 1) * width; ++i) dst[i] = on ? src[i] : 0.0;
            dst[d_head_ + g] = on ? 1.0 : 0.0;
        }
    }
    return in;
}

std::vector<double> reconstruct_value(std::span<const double> v, std::span<const std::size_t> keep,
                                      const Reconstructor& recon) {
    const std::size_t groups = recon.groups();
    if (v.size() != recon.d_head()) throw DimensionError("reconstruct_value: value width mismatch");
    if (keep.empty()) throw ArgumentError("reconstruct_value: keep set is empty");
    std::vector<std::uint8_t> bits(groups, 0);
    for (auto g : keep) {
        if (g >= groups) throw ArgumentError("reconstruct_value: group index out of range");
        bits[g] = 1;
    }
    std::vector<double> out(v.begin(), v.end());
    if (keep.size() == groups) return out;
    const Tensor vin = Tensor::vector(v).reshaped({1, v.size()});
    const Tensor vhat = recon.predict(recon.make_input(vin, bits));
    const std::size_t width = v.size() / groups;
    for (std::size_t g = 0; g < groups; ++g) {
        if (bits[g]) continue;
        for (std::size_t i = g * width; i < (g + 1) * width; ++i) out[i] = vhat[i];
    }
    return out;
}

Tensor route_values(const Tensor& router_input, const Tensor& v, std::size_t n_heads, std::size_t keep,
                    const GroupRouter& router, const Reconstructor& recon, ValueRoutingCache* cache) {
    const std::size_t tokens = v.rows();
    const std::size_t groups = router.groups();
    const std::size_t d_head = v.cols() / n_heads;
    if (d_head != recon.d_head() || recon.groups() != groups) {
        throw DimensionError("route_values: reconstructor does not match value layout");
    }
    if (router_input.rows() != tokens) throw DimensionError("route_values: router input / value row mismatch");

    Tensor scores = router.scores(router_input);
    std::vector<std::uint8_t> bits(tokens * groups, 0);
    for (std::size_t t = 0; t < tokens; ++t) {
        for (auto g : topk_indices(scores.row(t), keep)) bits[t * groups + g] = 1;
    }

    ValueRoutingCache local;
    ValueRoutingCache& c = cache != nullptr ? *cache : local;
    c.router_input = router_input;
    c.router_scores = std::move(scores);
    c.bypass = keep == groups;
    if (c.bypass) {
        c.keep = std::move(bits);
        return v;
    }

    const Tensor rows = v.reshaped({tokens * n_heads, d_head});
    std::vector<std::uint8_t> row_bits(tokens * n_heads * groups);
    for (std::size_t t = 0; t < tokens; ++t) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            std::copy_n(bits.begin() + static_cast<std::ptrdiff_t>(t * groups), groups,
                        row_bits.begin() + static_cast<std::ptrdiff_t>((t * n_heads + h) * groups));
        }
    }
    c.vhat = recon.predict(recon.make_input(rows, row_bits), &c.recon);
    c.keep = std::move(bits);

    const std::size_t width = d_head / groups;
    Tensor out = v;
    for (std::size_t t = 0; t < tokens; ++t) {
        auto dst = out.row(t);
        for (std::size_t h = 0; h < n_heads; ++h) {
            auto pred = c.vhat.row(t * n_heads + h);
            for (std::size_t g = 0; g < groups; ++g) {
                if (c.keep[t * groups + g]) continue;
                for (std::size_t i = g * width; i < (g + 1) * width; ++i) dst[h * d_head + i] = pred[i];
            }
        }
    }
    return out;
}

Tensor route_values_backward(const ValueRoutingCache& cache, Reconstructor& recon, const Tensor& dvtilde,
                             std::size_t n_heads) {
    if (cache.bypass) return dvtilde;
    const std::size_t tokens = dvtilde.rows();
    const std::size_t d_head = dvtilde.cols() / n_heads;
    const std::size_t groups = recon.groups();
    const std::size_t width = d_head / groups;

    Tensor dv = dvtilde;
    Tensor dvhat({tokens * n_heads, d_head});
    for (std::size_t t = 0; t < tokens; ++t) {
        auto drow = dv.row(t);
        for (std::size_t h = 0; h < n_heads; ++h) {
            auto hrow = dvhat.row(t * n_heads + h);
            for (std::size_t g = 0; g < groups; ++g) {
                if (cache.keep[t * groups + g]) continue;
                for (std::size_t i = g * width; i < (g + 1) * width; ++i) {
                    hrow[i] = drow[h * d_head + i];
                    drow[h * d_head + i] = 0.0;
                }
            }
        }
    }
    const Tensor dinput = recon.mlp().backward(cache.recon, dvhat, false, true);
    for (std::size_t t = 0; t < tokens; ++t) {
        auto drow = dv.row(t);
        for (std::size_t h = 0; h < n_heads; ++h) {
            auto irow = dinput.row(t * n_heads + h);
            for (std::size_t g = 0; g < groups; ++g) {
                if (!cache.keep[t * groups + g]) continue;
                for (std::size_t i = g * width; i < (g + 1) * width; ++i) drow[h * d_head + i] += irow[i];
            }
        }
    }
    return dv;
}

}  // namespace subtoken::kv
