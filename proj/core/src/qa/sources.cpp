// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/qa/sources.hpp"

#include <algorithm>
#include <numeric>
#include <optional>

#include "subtoken/error.hpp"
#include "subtoken/qa/selector.hpp"

namespace subtoken::qa {

namespace {

Tensor context_rows(const Tensor& t, std::size_t context) {
    Tensor out({context, t.cols()});
    std::copy_n(t.raw(), context * t.cols(), out.raw());
    return out;
}

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
    std::vector<std::size_t> v(end - begin);
    std::iota(v.begin(), v.end(), begin);
    return v;
}

}  // namespace

OracleMaskSource::OracleMaskSource(SelectorBudget budget, Allocation allocation)
    : budget_(budget), allocation_(allocation) {
    budget_.spec(0, 0).validate();
    if (allocation_ == Allocation::kFixedK && budget_.token_keep != 1.0) {
        throw ConfigError("fixed-K allocation does not combine with token dropping");
    }
}

model::QaSelection OracleMaskSource::select(const model::SplitContext& ctx) const {
    const std::size_t rows = ctx.hidden.rows();
    if (ctx.context == 0) return model::QaSelection::full(rows, budget_.groups, 0);
    if (ctx.probe_attention == nullptr) throw ConfigError("oracle mask source needs probe attention");
    const auto alpha = diagnostic_alpha(*ctx.probe_attention, range(ctx.context, rows), range(0, ctx.context));
    const Tensor s = pair_scores(alpha, ctx.values, ctx.n_heads, budget_.groups);
    const auto spec = budget_.spec(ctx.context, rows - ctx.context);
    if (allocation_ == Allocation::kFixedK) {
        const std::size_t k = kv::floor_count(budget_.rho * static_cast<double>(budget_.groups));
        return model::QaSelection{std::vector<std::uint8_t>(rows, 1), fixed_k_mask(s, k, spec)};
    }
    return combined_selection(alpha, s, spec);
}

PredictorMaskSource::PredictorMaskSource(const RelevancePredictor& groups, const RelevancePredictor* tokens,
                                         SelectorBudget budget)
    : groups_(groups), tokens_(tokens), budget_(budget) {
    budget_.spec(0, 0).validate();
    if (groups_.outputs() != budget_.groups) {
        throw ConfigError("predictor has " + std::to_string(groups_.outputs()) + " outputs for " +
                          std::to_string(budget_.groups) + " groups");
    }
    if (budget_.token_keep < 1.0 && (tokens_ == nullptr || tokens_->outputs() != 1)) {
        throw ConfigError("token dropping needs a scalar token predictor");
    }
}

model::QaSelection PredictorMaskSource::select(const model::SplitContext& ctx) const {
    const std::size_t rows = ctx.hidden.rows();
    if (ctx.context == 0) return model::QaSelection::full(rows, budget_.groups, 0);
    const Tensor h = context_rows(ctx.hidden, ctx.context);
    // ranking across groups needs the raw scale, not the per-group standardized one
    const Tensor s = groups_.predict(h);
    std::vector<double> alpha(ctx.context, 0.0);
    if (tokens_ != nullptr && budget_.token_keep < 1.0) {
        const Tensor a = tokens_->predict(h);
        alpha.assign(a.data().begin(), a.data().end());
    }
    return combined_selection(alpha, s, budget_.spec(ctx.context, rows - ctx.context));
}

std::size_t default_probe_layer(const model::ModelConfig& config) {
    const std::size_t first = config.first_compressed_layer();
    return first == 0 ? 0 : first - 1;
}

OracleTargets oracle_targets(const model::Transformer& model, std::span<const std::size_t> tokens,
                             std::size_t query_len, std::size_t groups, std::optional<std::size_t> probe_layer) {
    const std::size_t rows = tokens.size();
    if (rows <= query_len) {
        throw ArgumentError("oracle_targets: sequence of " + std::to_string(rows) +
                            " tokens has no context before a query region of " + std::to_string(query_len));
    }
    model::ForwardOptions opts;
    opts.probe_layer = probe_layer.value_or(default_probe_layer(model.config()));
    opts.keep_split = true;
    const auto res = model.forward(tokens, opts);
    OracleTargets out;
    out.context = rows - query_len;
    out.alpha = diagnostic_alpha(*res.probe_attention, range(out.context, rows), range(0, out.context));
    const std::vector<double> ones(out.context, 1.0);
    out.group_norms = pair_scores(ones, *res.split_values, model.config().n_heads, groups);
    out.scores = out.group_norms;
    for (std::size_t j = 0; j < out.context; ++j) {
        for (std::size_t g = 0; g < groups; ++g) out.scores(j, g) *= out.alpha[j];
    }
    out.hidden = context_rows(*res.split_hidden, out.context);
    return out;
}

}  // namespace subtoken::qa
