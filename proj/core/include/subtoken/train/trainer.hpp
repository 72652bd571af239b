// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "subtoken/kv/budget.hpp"
#include "subtoken/model/checkpoint.hpp"
#include "subtoken/model/transformer.hpp"
#include "subtoken/qa/predictor.hpp"
#include "subtoken/train/corpus.hpp"
#include "subtoken/train/optimizer.hpp"

namespace subtoken::train {

/// One line of metrics.jsonl.
struct MetricRecord {
    std::string phase;  // "pretrain", "qi", "predictor", "eval"
    std::size_t step = 0;
    double lm_loss = 0.0;   // mean training loss since the previous record
    double aux_loss = 0.0;
    double lb_loss = 0.0;
    double val_loss = 0.0;
    double val_ppl = 0.0;
    double tokens_kept = 1.0;
    double rho = 1.0;
    double total_kv = 1.0;
};

/// Serializes a record as one JSON object with a fixed key order.
std::string to_json_line(const MetricRecord& record);

class MetricsSink {
public:
    virtual ~MetricsSink() = default;
    virtual void write(const MetricRecord& record) = 0;
};

/// Appends JSON lines to a file. Throws FileError when it cannot be opened.
class JsonlMetrics : public MetricsSink {
public:
    explicit JsonlMetrics(const std::string& path);
    void write(const MetricRecord& record) override;

private:
    std::ofstream out_;
};

/// Keeps records in memory.
class MemoryMetrics : public MetricsSink {
public:
    void write(const MetricRecord& record) override { records.push_back(record); }
    std::vector<MetricRecord> records;
};

struct TrainSummary {
    std::size_t steps = 0;
    double initial_val_loss = 0.0;
    double final_val_loss = 0.0;
};

/// Splits a chunk into model inputs (all but the last token) and targets.
std::span<const std::size_t> chunk_inputs(const TokenSeq& chunk);
std::span<const std::size_t> chunk_targets(const TokenSeq& chunk);

/// Mean next-token loss over the first `limit` chunks (0 = all). `stats`
/// receives the retention of the last forward pass when non-null.
double evaluate_lm(const model::Transformer& model, model::Mode mode, const std::vector<TokenSeq>& chunks,
                   std::size_t limit, kv::RetentionStats* stats = nullptr);

/// Trains a fresh base model with plain language modeling, then freezes it.
model::Transformer pretrain_base(const model::ModelConfig& config, CorpusStream& corpus, const TrainConfig& train,
                                 MetricsSink* metrics, TrainSummary* summary = nullptr);

/// Optimizes the attached adapters with L_LM + lambda_lb * L_lb on the
/// routed-LoRA side and lambda_aux * L_aux on the cache side. The base must
/// be frozen; its checksum is verified after training. Throws
/// TrainingError naming the step and term on a non-finite loss.
TrainSummary train_qi(model::Transformer& model, CorpusStream& corpus, const TrainConfig& train,
                      MetricsSink* metrics);

/// Loss terms of one query-independent training sequence, with gradients
/// accumulated into every parameter that has a slot. `grad_scale`
/// multiplies all gradients (e.g. 1 / batch).
struct QiStepLoss {
    double lm = 0.0;
    double aux = 0.0;
    double lb = 0.0;
};
QiStepLoss qi_sequence_step(model::Transformer& model, const TokenSeq& chunk, const TrainConfig& train,
                            Rng* dropout_rng, double grad_scale, bool training);

struct PredictorConfig {
    std::size_t sequences = 256;
    std::size_t epochs = 30;
    std::size_t batch_rows = 64;
    double lr = 1e-3;
    double weight_decay = 0.0;
    std::size_t query_len = 16;
    std::size_t groups = 4;
    std::uint64_t seed = 0;
};

struct PredictorBundle {
    qa::RelevancePredictor groups;  // d_model -> 256 -> S
    qa::RelevancePredictor tokens;  // d_model -> 256 -> 1
    double group_loss = 0.0;        // final full-data MSE on standardized targets
    double token_loss = 0.0;
    std::size_t rows = 0;
};

/// Collects diagnostic targets from the frozen model on the given
/// sequences, standardizes them per output, and fits both predictors by
/// MSE. Throws ConfigError when no targets can be collected.
PredictorBundle train_predictor(const model::Transformer& model, const std::vector<TokenSeq>& sequences,
                                const PredictorConfig& config, MetricsSink* metrics);

/// Both predictors with their target statistics, plus the model
/// configuration they were trained against.
model::Checkpoint predictor_checkpoint(const PredictorBundle& bundle, const model::ModelConfig& config);
/// Throws ConfigError when the stored model configuration differs.
PredictorBundle load_predictor(const model::Checkpoint& ckpt, const model::ModelConfig& config);

}  // namespace subtoken::train
