// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "subtoken/harness/experiments.hpp"
#include "subtoken/harness/grad_suite.hpp"
#include "subtoken/harness/run_config.hpp"
#include "subtoken/train/trainer.hpp"

namespace subtoken::harness {

// Every command creates `out_dir`, writes the resolved configuration to
// <out_dir>/config.txt, and appends training/eval records to
// <out_dir>/metrics.jsonl. `config` must already be finalized.

/// Writes the two synthetic corpora as base_corpus.txt and adapt_corpus.txt.
void cmd_make_corpus(const RunConfig& config, const std::string& out_dir);

/// Pretrains on the base corpus and writes the frozen base checkpoint.
train::TrainSummary cmd_pretrain_base(const RunConfig& config, const std::string& out_dir);

/// Trains routed LoRA + value routing on the adaptation corpus from the base
/// checkpoint and writes the adapter checkpoint.
train::TrainSummary cmd_train_qi(const RunConfig& config, const std::string& out_dir);

/// Fits both relevance predictors on base-corpus training chunks.
train::PredictorBundle cmd_train_predictor(const RunConfig& config, const std::string& out_dir);

struct EvalOutcome {
    std::optional<double> val_loss;       // qi / baseline modes
    std::vector<QaEvalRow> qa_rows;       // qa mode
    std::optional<OverlapResult> overlap; // qa mode with the predictor selector
};

/// eval.mode = qi: validation loss of base + adapters on the adaptation corpus.
/// eval.mode = baseline: the same for the frozen base alone.
/// eval.mode = qa: agreement with the baseline per eval.rhos on held-out
/// base-corpus chunks (eval_qa.csv); with qa.selector = predictor also the
/// predictor/oracle mask overlap at qa.rho (predictor_overlap.csv).
/// Throws FileError when a required checkpoint is missing.
EvalOutcome cmd_eval(const RunConfig& config, const std::string& out_dir);

/// Oracle allocation statistics at diagnostics.rho (diagnostics.csv and
/// diagnostics_summary.csv).
DiagnosticsResult cmd_diagnostics(const RunConfig& config, const std::string& out_dir);

/// budget.csv for budget.specs.
std::vector<BudgetRow> cmd_budget_table(const RunConfig& config, const std::string& out_dir);

/// grad_check.csv for the full finite-difference suite.
std::vector<GradCheckEntry> cmd_grad_check(const RunConfig& config, const std::string& out_dir);

/// Writes `text` to <dir>/<name>; throws FileError.
void write_text(const std::string& dir, const std::string& name, const std::string& text);

}  // namespace subtoken::harness
