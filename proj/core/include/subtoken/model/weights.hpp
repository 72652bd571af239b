// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "subtoken/kv/value_groups.hpp"
#include "subtoken/lora/routed_lora.hpp"
#include "subtoken/model/config.hpp"
#include "subtoken/numerics/mlp.hpp"
#include "subtoken/numerics/rng.hpp"
#include "subtoken/numerics/tensor.hpp"

namespace subtoken::model {

struct LayerWeights {
    Tensor ln1_g, ln1_b;
    Tensor wq, wk, wv, wo;  // [d_model x d_model], head h owns rows h*d_head..(h+1)*d_head
    Tensor ln2_g, ln2_b;
    Tensor w1, b1;  // [d_ff x d_model], [d_ff]
    Tensor w2, b2;  // [d_model x d_ff], [d_model]

    const Tensor& projection(Projection p) const;
    Tensor& projection(Projection p);
};

/// Pretrained decoder weights. Once frozen no gradient slots exist.
struct BaseWeights {
    Tensor tok_emb;  // [vocab x d_model]
    Tensor pos_emb;  // [max_seq x d_model]
    std::vector<LayerWeights> layers;
    Tensor lnf_g, lnf_b;
    Tensor head;  // [vocab x d_model]
    bool frozen = false;

    static BaseWeights create(const ModelConfig& config);

    /// N(0, 0.02) matrices (residual outputs scaled by 1/sqrt(2 n_layers)),
    /// unit LayerNorm gains, zero shifts and biases.
    void init(Rng& rng);

    void visit(const ParamVisitor& fn);
    void cvisit(const ConstParamVisitor& fn) const;

    void enable_grad();
    /// Marks the weights frozen and releases every gradient slot.
    void freeze();

    /// FNV-1a over the raw bytes of every array, in visit order.
    std::uint64_t checksum() const;
};

struct LayerAdapters {
    std::array<std::optional<lora::RoutedLora>, 4> lora;
    kv::GroupRouter router;
    kv::Reconstructor recon;

    const lora::RoutedLora* adapter(Projection p) const;
    lora::RoutedLora* adapter(Projection p);
};

/// Routed LoRA plus value-group routing for every layer.
struct QiAdapters {
    QiConfig config;
    std::vector<LayerAdapters> layers;

    static QiAdapters create(const QiConfig& config, const ModelConfig& model);
    void init(Rng& rng);

    /// Parameters trained by the language-model loss.
    void visit_lora(const ParamVisitor& fn);
    /// Parameters trained by the cache-side auxiliary loss.
    void visit_cache(const ParamVisitor& fn);
    void visit(const ParamVisitor& fn);
    void cvisit(const ConstParamVisitor& fn) const;
};

}  // namespace subtoken::model
