// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "subtoken/kv/budget.hpp"
#include "subtoken/model/transformer.hpp"
#include "subtoken/qa/predictor.hpp"

namespace subtoken::qa {

/// Budget knobs shared by every query-aware mask source.
struct SelectorBudget {
    double rho = 1.0;
    double token_keep = 1.0;
    std::size_t groups = 4;

    kv::BudgetSpec spec(std::size_t context, std::size_t query) const {
        return kv::BudgetSpec{rho, groups, token_keep, context, query};
    }
};

enum class Allocation {
    kGlobalTopM,  // token-dependent K_j under one global budget
    kFixedK,      // K = rho * S groups for every token
};

/// Diagnostic selection from the probe-layer attention of the query rows.
///
/// The mask depends on the query region, so unlike every other mode the
/// outputs at a query position can change with later query tokens.
class OracleMaskSource : public model::MaskSource {
public:
    explicit OracleMaskSource(SelectorBudget budget, Allocation allocation = Allocation::kGlobalTopM);
    model::QaSelection select(const model::SplitContext& ctx) const override;
    bool needs_probe() const override { return true; }

private:
    SelectorBudget budget_;
    Allocation allocation_;
};

/// Learned selection from the split-layer hidden states of the context rows.
/// `tokens` may be null when token_keep == 1.
class PredictorMaskSource : public model::MaskSource {
public:
    PredictorMaskSource(const RelevancePredictor& groups, const RelevancePredictor* tokens, SelectorBudget budget);
    model::QaSelection select(const model::SplitContext& ctx) const override;

private:
    const RelevancePredictor& groups_;
    const RelevancePredictor* tokens_;
    SelectorBudget budget_;
};

/// Diagnostic relevance of one sequence under the baseline model.
struct OracleTargets {
    std::size_t context = 0;
    std::vector<double> alpha;  // [|C|]
    Tensor group_norms;         // [|C| x S], head-pooled value-group norms
    Tensor scores;              // [|C| x S], alpha_j * group_norms[j, g]
    Tensor hidden;              // [|C| x d_model], residual stream entering the first compressed layer
};

/// Runs the baseline once and derives alpha (probe layer, default the last
/// uncompressed layer) and pair scores from the first compressed layer's
/// values. Throws ArgumentError when the sequence has no context region.
OracleTargets oracle_targets(const model::Transformer& model, std::span<const std::size_t> tokens,
                             std::size_t query_len, std::size_t groups,
                             std::optional<std::size_t> probe_layer = std::nullopt);

/// Default probe: the layer right before the first compressed one (0 if none precedes it).
std::size_t default_probe_layer(const model::ModelConfig& config);

}  // namespace subtoken::qa
