// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "subtoken/harness/run_config.hpp"
#include "subtoken/kv/budget.hpp"
#include "subtoken/model/transformer.hpp"
#include "subtoken/train/corpus.hpp"
#include "subtoken/train/trainer.hpp"

namespace subtoken::harness {

/// Text of a corpus source ("synthetic:prose", "synthetic:logs" or a path).
std::string corpus_text(const CorpusSource& source, std::uint64_t seed);
train::CorpusStream load_corpus(const CorpusSource& source, const DataSettings& data, std::uint64_t seed);

/// `n` chunk inputs drawn without replacement from `pool` (all of it when
/// n >= pool size), in a seed-determined order.
std::vector<train::TokenSeq> sample_inputs(const std::vector<train::TokenSeq>& pool, std::size_t n,
                                           std::uint64_t seed);

struct BudgetRow {
    double tokens_kept = 1.0;
    double rho = 1.0;
    double total_kv = 1.0;
};
std::vector<BudgetRow> budget_table(std::span<const kv::BudgetSpec> specs);
/// Columns: tokens_kept,rho,total_kv,total_kv_pct (fractions to 3 places,
/// percentage to 1 place).
std::string budget_csv(std::span<const BudgetRow> rows);

struct QaEvalRow {
    double rho = 1.0;
    double token_keep = 1.0;
    double total_kv = 1.0;           // kv_retention_fraction of the budget
    double measured_total_kv = 1.0;  // mean over sequences of the snapshot metadata
    double agreement = 1.0;          // greedy-token agreement with the baseline at query positions
    double mean_kl = 0.0;            // KL(baseline || compressed) at query positions
    double kept_global = 0.0;        // oracle score kept by the global top-M mask
    double kept_fixed_k = 0.0;       // oracle score kept by a per-token K = rho*S mask
    bool matched_budget = false;     // rho*S is an integer, so both masks keep the same count
};

/// Compressed-vs-baseline agreement for each budget in `rhos` (token_keep
/// from `qa`). `predictor` selects the learned mask source when non-null;
/// otherwise the diagnostic oracle is used.
std::vector<QaEvalRow> qa_eval(const model::Transformer& model, const std::vector<train::TokenSeq>& inputs,
                               const QaSettings& qa, std::span<const double> rhos,
                               const train::PredictorBundle* predictor);
std::string qa_eval_csv(std::span<const QaEvalRow> rows);

struct DiagnosticToken {
    std::size_t sequence = 0;
    std::size_t token_index = 0;
    double alpha = 0.0;
    std::size_t k = 0;
    std::vector<double> group_norms;
    std::string mask_bits;
};

struct DiagnosticsSummary {
    std::size_t tokens = 0;
    double mean_k = 0.0;
    double expected_k = 0.0;  // rho * S
    std::vector<std::size_t> histogram;  // counts of K_j = 0..S
    std::size_t distinct_k = 0;
    double spearman = 0.0;  // pooled over all sequences
    bool degenerate = false;  // some sequence had all-equal pair scores
};

struct DiagnosticsResult {
    std::vector<DiagnosticToken> tokens;
    DiagnosticsSummary summary;
};

/// Oracle allocation on each sequence at retention `rho` (token_keep = 1).
DiagnosticsResult run_diagnostics(const model::Transformer& model, const std::vector<train::TokenSeq>& inputs,
                                  const QaSettings& qa, double rho);
std::string diagnostics_csv(const DiagnosticsResult& result);
std::string diagnostics_summary_csv(const DiagnosticsSummary& summary);

/// Spearman rank correlation with average ranks for ties; 0 when either
/// input is constant.
double spearman(std::span<const double> x, std::span<const double> y);

struct OverlapResult {
    double jaccard = 0.0;         // predictor mask vs oracle mask
    double random_jaccard = 0.0;  // uniformly random mask of the same budget vs oracle mask
    std::size_t sequences = 0;
};

/// Mean per-sequence Jaccard overlap of top-M masks at retention `rho`.
OverlapResult predictor_overlap(const model::Transformer& model, const train::PredictorBundle& predictor,
                                const std::vector<train::TokenSeq>& inputs, const QaSettings& qa, double rho,
                                std::uint64_t seed);

}  // namespace subtoken::harness
