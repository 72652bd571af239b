// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "subtoken/lora/routed_lora.hpp"

namespace subtoken::model {

inline constexpr std::size_t kByteVocab = 256;
inline constexpr std::size_t kBosToken = 256;
inline constexpr std::size_t kEosToken = 257;

/// Shape of the toy decoder. Layers are numbered from 1 in `split_layer`:
/// layers split_layer..n_layers run on compressed values, so split_layer = 4
/// on a 4-layer model compresses only the last layer.
struct ModelConfig {
    std::size_t vocab_size = kByteVocab + 2;
    std::size_t d_model = 64;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t d_head = 16;
    std::size_t d_ff = 256;
    std::size_t max_seq = 256;
    std::optional<std::size_t> split_layer;

    /// Throws ConfigError on n_heads * d_head != d_model or a split outside (0, n_layers].
    void validate() const;

    /// ceil(0.78 * n_layers): the deepest ~22% of layers are compressed.
    static std::size_t proportional_split(std::size_t n_layers);

    /// 0-based index of the first compressed layer.
    std::size_t first_compressed_layer() const;
};

/// Which base projections carry routed LoRA.
enum class Projection { kQuery, kKey, kValue, kOutput };

std::string projection_name(Projection p);
/// Parses "q", "k", "v", "o"; throws ConfigError otherwise.
Projection parse_projection(const std::string& s);

/// Adapters for the query-independent model.
struct QiConfig {
    lora::RoutedLoraConfig lora;
    std::vector<Projection> targets{Projection::kQuery, Projection::kValue};
    bool value_routing = true;
    std::size_t groups = 4;
    std::size_t keep = 2;
    std::size_t recon_hidden = 0;  // 0 selects 2 * d_head

    void validate(const ModelConfig& model) const;
    std::size_t reconstructor_hidden(const ModelConfig& model) const {
        return recon_hidden == 0 ? 2 * model.d_head : recon_hidden;
    }
};

/// `model.*` lines in the flat key=value format.
std::string to_config_text(const ModelConfig& config);
/// Applies one `model.*` key; returns false for a key outside that section.
/// Throws ConfigError for an unknown `model.*` key or a malformed value.
bool apply_model_key(ModelConfig& config, std::string_view key, std::string_view value);

/// `lora.*` and `routing.*` lines.
std::string to_config_text(const QiConfig& config);
bool apply_qi_key(QiConfig& config, std::string_view key, std::string_view value);

}  // namespace subtoken::model
