// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "subtoken/kv/budget.hpp"
#include "subtoken/kv/value_groups.hpp"
#include "subtoken/lora/routed_lora.hpp"
#include "subtoken/model/config.hpp"
#include "subtoken/model/weights.hpp"
#include "subtoken/numerics/ops.hpp"
#include "subtoken/numerics/rng.hpp"

namespace subtoken::model {

enum class Mode {
    kBaseline,      // frozen base only
    kQiRouted,      // routed LoRA + value-group routing with reconstruction on every layer
    kQaCompressed,  // query-aware masked values on layers >= split
};

/// Scaled dot-product attention for one head: softmax(q k^T / sqrt(d)) v.
/// Throws DimensionError on mismatched shapes.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v_routed, bool causal);

/// What a query-aware mask source sees when the forward pass reaches the split.
struct SplitContext {
    const Tensor& hidden;           // [T x d_model] residual stream entering the first compressed layer
    const Tensor* probe_attention;  // [T x T] head-averaged attention at the probe layer, or null
    const Tensor& values;           // [T x d_model] values of the first compressed layer
    std::size_t n_heads;
    std::size_t context;            // |C|; rows [context, T) are the query region
};

/// Token survival plus per-group keep bits for one sequence.
struct QaSelection {
    std::vector<std::uint8_t> token_alive;  // one entry per sequence row; query rows always 1
    kv::SelectionMask mask;

    static QaSelection full(std::size_t rows, std::size_t groups, std::size_t context);
};

/// Strategy that chooses the query-aware selection at the split.
class MaskSource {
public:
    virtual ~MaskSource() = default;
    virtual QaSelection select(const SplitContext& ctx) const = 0;
    /// True when select() reads SplitContext::probe_attention.
    virtual bool needs_probe() const { return false; }
};

/// Always returns a precomputed selection.
class FixedMaskSource : public MaskSource {
public:
    explicit FixedMaskSource(QaSelection selection) : selection_(std::move(selection)) {}
    QaSelection select(const SplitContext& ctx) const override;

private:
    QaSelection selection_;
};

struct KvSnapshot {
    std::vector<Tensor> keys;    // per layer [T x d_model] (heads concatenated)
    std::vector<Tensor> values;  // per layer, as read by attention
    kv::RetentionStats retention;
};

struct ForwardOptions {
    Mode mode = Mode::kBaseline;
    const MaskSource* mask_source = nullptr;
    std::size_t query_len = 16;
    /// 0-based layer whose head-averaged attention is recorded.
    std::optional<std::size_t> probe_layer;
    bool training = false;
    Rng* dropout_rng = nullptr;
    bool keep_cache = false;
    bool keep_snapshot = false;
    /// Record hidden state and values at the first compressed layer.
    bool keep_split = false;
};

struct LayerCache {
    Tensor x_in;
    LayerNormCache ln1;
    Tensor a;
    std::array<std::optional<lora::RoutedLora::Cache>, 4> proj;
    Tensor q, k, v;
    Tensor v_read;  // values fed to attention
    kv::ValueRoutingCache routing;
    bool routed = false;
    std::vector<Tensor> probs;  // per head [T x T]
    Tensor attn;
    Tensor x_mid;
    LayerNormCache ln2;
    Tensor m;
    Tensor ff_pre;
    Tensor ff_act;
};

struct ForwardCache {
    Mode mode = Mode::kBaseline;
    std::vector<std::size_t> tokens;
    std::vector<LayerCache> layers;
    LayerNormCache lnf;
    Tensor hf;
};

struct ForwardResult {
    Tensor logits;  // [T x vocab]
    KvSnapshot snapshot;
    std::optional<Tensor> probe_attention;
    std::optional<Tensor> split_hidden;
    std::optional<Tensor> split_values;
    std::optional<QaSelection> selection;
    std::shared_ptr<ForwardCache> cache;
};

/// Toy pre-norm decoder with learned positions.
class Transformer {
public:
    Transformer(ModelConfig config, BaseWeights base);

    const ModelConfig& config() const { return config_; }
    BaseWeights& base() { return base_; }
    const BaseWeights& base() const { return base_; }

    bool has_qi() const { return qi_.has_value(); }
    QiAdapters& qi();
    const QiAdapters& qi() const;
    void attach_qi(QiAdapters adapters);

    /// Throws ArgumentError for an empty or over-long sequence or an
    /// out-of-vocabulary token, ConfigError for qa_compressed without a mask
    /// source or qi_routed without adapters.
    ForwardResult forward(std::span<const std::size_t> tokens, const ForwardOptions& options) const;

    /// Accumulates gradients of a loss with dL/dlogits into every parameter
    /// that has a gradient slot. Reconstructor parameters are never touched.
    /// Supports the baseline and qi_routed modes.
    void backward(const ForwardCache& cache, const Tensor& dlogits);

    /// Head-averaged post-softmax attention at `probe_layer` (0-based) of the
    /// baseline model. Throws ArgumentError for an invalid layer.
    Tensor collect_attention_mass(std::span<const std::size_t> tokens, std::size_t probe_layer) const;

private:
    ModelConfig config_;
    BaseWeights base_;
    std::optional<QiAdapters> qi_;
};

}  // namespace subtoken::model
