// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/qa/selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "subtoken/error.hpp"
#include "subtoken/numerics/ops.hpp"

namespace subtoken::qa {

namespace {

void check_scores(const Tensor& scores, const kv::BudgetSpec& spec, const char* what) {
    spec.validate();
    if (scores.rank() != 2 || scores.rows() != spec.context || scores.cols() != spec.groups) {
        throw DimensionError(std::string(what) + ": scores " + shape_str(scores.shape()) + " do not match |C| = " +
                             std::to_string(spec.context) + ", S = " + std::to_string(spec.groups));
    }
}

// Indices of the `count` largest entries among `candidates` (flat pair ids);
// ties go to the smaller id.
std::vector<std::size_t> top_pairs(const Tensor& scores, std::vector<std::size_t> candidates, std::size_t count) {
    count = std::min(count, candidates.size());
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    };
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(count), candidates.end(),
                      better);
    candidates.resize(count);
    return candidates;
}

}  // namespace

std::vector<double> diagnostic_alpha(const Tensor& attention, std::span<const std::size_t> query,
                                     std::span<const std::size_t> context) {
    if (query.empty()) throw ArgumentError("diagnostic_alpha: empty query set");
    if (attention.rank() != 2 || attention.rows() != attention.cols()) {
        throw DimensionError("diagnostic_alpha: attention must be square, got " + shape_str(attention.shape()));
    }
    const std::size_t n = attention.rows();
    for (auto i : query) {
        if (i >= n) throw ArgumentError("diagnostic_alpha: query index " + std::to_string(i) + " out of range");
    }
    std::vector<double> alpha(context.size(), 0.0);
    for (std::size_t c = 0; c < context.size(); ++c) {
        if (context[c] >= n) {
            throw ArgumentError("diagnostic_alpha: context index " + std::to_string(context[c]) + " out of range");
        }
        for (auto q : query) alpha[c] += attention(q, context[c]);
        alpha[c] /= static_cast<double>(query.size());
    }
    return alpha;
}

Tensor pair_scores(std::span<const double> alpha, const Tensor& v, std::size_t groups) {
    if (v.rank() != 2 || v.rows() != alpha.size()) {
        throw DimensionError("pair_scores: values " + shape_str(v.shape()) + " vs " + std::to_string(alpha.size()) +
                             " relevance entries");
    }
    return pair_scores(alpha, v, 1, groups);
}

Tensor pair_scores(std::span<const double> alpha, const Tensor& values, std::size_t n_heads, std::size_t groups) {
    if (alpha.empty()) throw ArgumentError("pair_scores: empty context");
    if (values.rank() != 2 || values.rows() < alpha.size() || n_heads == 0 || values.cols() % n_heads != 0) {
        throw DimensionError("pair_scores: values " + shape_str(values.shape()) + " do not cover " +
                             std::to_string(alpha.size()) + " tokens of " + std::to_string(n_heads) + " heads");
    }
    const std::size_t dh = values.cols() / n_heads;
    Tensor s({alpha.size(), groups});
    for (std::size_t j = 0; j < alpha.size(); ++j) {
        auto row = values.row(j);
        std::vector<double> sq(groups, 0.0);
        for (std::size_t h = 0; h < n_heads; ++h) {
            const auto norms = group_l2_norms(row.subspan(h * dh, dh), groups);
            for (std::size_t g = 0; g < groups; ++g) sq[g] += norms[g] * norms[g];
        }
        for (std::size_t g = 0; g < groups; ++g) {
            s(j, g) = alpha[j] * std::sqrt(sq[g]);
        }
    }
    return s;
}

kv::SelectionMask global_topM_mask(const Tensor& scores, const kv::BudgetSpec& spec) {
    check_scores(scores, spec, "global_topM_mask");
    kv::SelectionMask mask(spec.context + spec.query, spec.groups, spec.context);
    std::vector<std::size_t> all(scores.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (auto id : top_pairs(scores, std::move(all), spec.pair_budget())) {
        mask.set(id / spec.groups, id % spec.groups, true);
    }
    return mask;
}

kv::SelectionMask fixed_k_mask(const Tensor& scores, std::size_t k, const kv::BudgetSpec& spec) {
    check_scores(scores, spec, "fixed_k_mask");
    kv::SelectionMask mask(spec.context + spec.query, spec.groups, spec.context);
    if (k == 0) return mask;
    for (std::size_t j = 0; j < spec.context; ++j) {
        for (auto g : topk_indices(scores.row(j), k)) mask.set(j, g, true);
    }
    return mask;
}

double kept_score(const kv::SelectionMask& mask, const Tensor& scores) {
    if (scores.rows() != mask.context_rows() || scores.cols() != mask.groups()) {
        throw DimensionError("kept_score: scores " + shape_str(scores.shape()) + " do not match the mask");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < mask.context_rows(); ++j) {
        for (std::size_t g = 0; g < mask.groups(); ++g) {
            if (mask.keep(j, g)) total += scores(j, g);
        }
    }
    return total;
}

std::vector<std::size_t> token_keep_set(std::span<const double> alpha_hat, double token_keep) {
    if (!(token_keep > 0.0 && token_keep <= 1.0)) {
        throw ArgumentError("token_keep_set: token_keep must lie in (0, 1]");
    }
    const std::size_t count = kv::floor_count(token_keep * static_cast<double>(alpha_hat.size()));
    std::vector<std::size_t> order(alpha_hat.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return alpha_hat[a] > alpha_hat[b]; });
    order.resize(count);
    std::sort(order.begin(), order.end());
    return order;
}

model::QaSelection combined_selection(std::span<const double> alpha_hat, const Tensor& scores,
                                      const kv::BudgetSpec& spec) {
    check_scores(scores, spec, "combined_selection");
    if (alpha_hat.size() != spec.context) {
        throw DimensionError("combined_selection: " + std::to_string(alpha_hat.size()) +
                             " token scores for |C| = " + std::to_string(spec.context));
    }
    const std::size_t rows = spec.context + spec.query;
    model::QaSelection sel{std::vector<std::uint8_t>(rows, 1), kv::SelectionMask(rows, spec.groups, spec.context)};
    std::fill(sel.token_alive.begin(), sel.token_alive.begin() + static_cast<std::ptrdiff_t>(spec.context), 0);
    const auto survivors = spec.context == 0 ? std::vector<std::size_t>{} : token_keep_set(alpha_hat, spec.token_keep);
    std::vector<std::size_t> candidates;
    candidates.reserve(survivors.size() * spec.groups);
    for (auto j : survivors) {
        sel.token_alive[j] = 1;
        for (std::size_t g = 0; g < spec.groups; ++g) candidates.push_back(j * spec.groups + g);
    }
    for (auto id : top_pairs(scores, std::move(candidates), spec.pair_budget(survivors.size()))) {
        sel.mask.set(id / spec.groups, id % spec.groups, true);
    }
    return sel;
}

double mask_jaccard(const kv::SelectionMask& a, const kv::SelectionMask& b) {
    if (a.context_rows() != b.context_rows() || a.groups() != b.groups()) {
        throw DimensionError("mask_jaccard: masks cover different context shapes");
    }
    std::size_t inter = 0;
    std::size_t uni = 0;
    for (std::size_t j = 0; j < a.context_rows(); ++j) {
        for (std::size_t g = 0; g < a.groups(); ++g) {
            inter += a.keep(j, g) && b.keep(j, g);
            uni += a.keep(j, g) || b.keep(j, g);
        }
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double mean_context_k(const kv::SelectionMask& mask) {
    if (mask.context_rows() == 0) return 0.0;
    return static_cast<double>(mask.context_kept()) / static_cast<double>(mask.context_rows());
}

}  // namespace subtoken::qa
