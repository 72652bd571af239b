// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "subtoken/kv/budget.hpp"
#include "subtoken/model/config.hpp"
#include "subtoken/train/optimizer.hpp"
#include "subtoken/train/trainer.hpp"

namespace subtoken::harness {

/// Where a corpus comes from: a UTF-8 file, or "synthetic:prose" /
/// "synthetic:logs" generated from the run seed.
struct CorpusSource {
    std::string spec;
    std::size_t synthetic_bytes = 400000;
};

struct DataSettings {
    CorpusSource base{"synthetic:prose", 600000};
    CorpusSource adapt{"synthetic:logs", 300000};
    std::size_t seq_len = 64;
    double val_fraction = 0.05;
};

struct QaSettings {
    std::size_t query_len = 16;
    std::size_t groups = 4;
    double rho = 0.5;
    double token_keep = 1.0;
    std::optional<std::size_t> probe_layer;  // 0-based; default: last uncompressed layer
    std::string selector = "oracle";         // "oracle" or "predictor"
};

struct EvalSettings {
    std::string mode = "qa";  // "qa", "qi" or "baseline"
    std::size_t sequences = 32;
    std::vector<double> rhos{0.25, 0.5, 0.75, 1.0};
};

struct DiagnosticsSettings {
    double rho = 0.25;
    std::size_t sequences = 16;
};

struct CheckpointPaths {
    std::string base;       // default <out>/base.ckpt
    std::string qi;         // default <out>/qi.ckpt
    std::string predictor;  // default <out>/predictor.ckpt
};

/// Every tunable of a harness run. Keys use the flat `section.name=value`
/// form; unknown keys are rejected.
struct RunConfig {
    std::uint64_t seed = 0;
    model::ModelConfig model;
    model::QiConfig qi;
    train::TrainConfig pretrain;
    train::TrainConfig train;
    train::PredictorConfig predictor;
    QaSettings qa;
    EvalSettings eval;
    DiagnosticsSettings diagnostics;
    DataSettings data;
    CheckpointPaths ckpt;
    std::vector<kv::BudgetSpec> budget_specs;

    RunConfig();

    /// Applies one key; throws ConfigError for an unknown key or bad value.
    void set(std::string_view key, std::string_view value);
    /// Applies every line of a key=value text.
    void apply_text(std::string_view text, std::string_view origin);
    /// Reads and applies a config file; throws FileError when unreadable.
    void apply_file(const std::string& path);
    /// Applies "key=value"; throws ConfigError without '='.
    void apply_override(std::string_view assignment);

    /// Resolves checkpoint paths against `out_dir`, copies the data and
    /// seed settings into the stage configs, and validates everything.
    void finalize(const std::string& out_dir);

    /// Fully-resolved configuration in the same key=value format; feeding it
    /// back through apply_text reproduces this object.
    std::string to_text() const;
};

/// "tk:rho;tk:rho" budget list, e.g. "1:0.25;0.75:0.5".
std::vector<kv::BudgetSpec> parse_budget_specs(std::string_view text);
std::vector<double> parse_real_list(std::string_view key, std::string_view text);

}  // namespace subtoken::harness
