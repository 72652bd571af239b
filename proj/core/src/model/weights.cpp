// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/model/weights.hpp"

#include <cmath>
#include <cstring>

#include "subtoken/error.hpp"

namespace subtoken::model {

const Tensor& LayerWeights::projection(Projection p) const {
    switch (p) {
        case Projection::kQuery: return wq;
        case Projection::kKey: return wk;
        case Projection::kValue: return wv;
        case Projection::kOutput: return wo;
    }
    throw ArgumentError("unknown projection");
}

Tensor& LayerWeights::projection(Projection p) {
    return const_cast<Tensor&>(static_cast<const LayerWeights&>(*this).projection(p));
}

BaseWeights BaseWeights::create(const ModelConfig& config) {
    config.validate();
    const std::size_t d = config.d_model;
    BaseWeights w;
    w.tok_emb = Tensor({config.vocab_size, d});
    w.pos_emb = Tensor({config.max_seq, d});
    w.layers.resize(config.n_layers);
    for (auto& l : w.layers) {
        l.ln1_g = Tensor::filled({d}, 1.0);
        l.ln1_b = Tensor({d});
        l.wq = Tensor({d, d});
        l.wk = Tensor({d, d});
        l.wv = Tensor({d, d});
        l.wo = Tensor({d, d});
        l.ln2_g = Tensor::filled({d}, 1.0);
        l.ln2_b = Tensor({d});
        l.w1 = Tensor({config.d_ff, d});
        l.b1 = Tensor({config.d_ff});
        l.w2 = Tensor({d, config.d_ff});
        l.b2 = Tensor({d});
    }
    w.lnf_g = Tensor::filled({d}, 1.0);
    w.lnf_b = Tensor({d});
    w.head = Tensor({config.vocab_size, d});
    return w;
}

void BaseWeights::init(Rng& rng) {
    const double std = 0.02;
    const double resid_std = std / std::sqrt(2.0 * static_cast<double>(layers.size()));
    auto fill = [&](Tensor& t, double s) {
        for (double& v : t.data()) v = rng.normal(0.0, s);
    };
    fill(tok_emb, std);
    fill(pos_emb, std);
    for (auto& l : layers) {
        fill(l.wq, std);
        fill(l.wk, std);
        fill(l.wv, std);
        fill(l.wo, resid_std);
        fill(l.w1, std);
        fill(l.w2, resid_std);
        l.ln1_g.fill(1.0);
        l.ln1_b.fill(0.0);
        l.ln2_g.fill(1.0);
        l.ln2_b.fill(0.0);
        l.b1.fill(0.0);
        l.b2.fill(0.0);
    }
    lnf_g.fill(1.0);
    lnf_b.fill(0.0);
    fill(head, std);
}

void BaseWeights::visit(const ParamVisitor& fn) {
    fn("tok_emb", tok_emb);
    fn("pos_emb", pos_emb);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& l = layers[i];
        const std::string p = "layer" + std::to_string(i) + ".";
        fn(p + "ln1_g", l.ln1_g);
        fn(p + "ln1_b", l.ln1_b);
        fn(p + "wq", l.wq);
        fn(p + "wk", l.wk);
        fn(p + "wv", l.wv);
        fn(p + "wo", l.wo);
        fn(p + "ln2_g", l.ln2_g);
        fn(p + "ln2_b", l.ln2_b);
        fn(p + "w1", l.w1);
        fn(p + "b1", l.b1);
        fn(p + "w2", l.w2);
        fn(p + "b2", l.b2);
    }
    fn("lnf_g", lnf_g);
    fn("lnf_b", lnf_b);
    fn("head", head);
}

void BaseWeights::cvisit(const ConstParamVisitor& fn) const {
    const_cast<BaseWeights*>(this)->visit([&](const std::string& name, Tensor& t) { fn(name, t); });
}

void BaseWeights::enable_grad() {
    if (frozen) throw ConfigError("base weights are frozen");
    visit([](const std::string&, Tensor& t) { t.enable_grad(); });
}

void BaseWeights::freeze() {
    frozen = true;
    visit([](const std::string&, Tensor& t) { t.drop_grad(); });
}

std::uint64_t BaseWeights::checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    cvisit([&](const std::string&, const Tensor& t) {
        for (double v : t.data()) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof(double));
            for (unsigned char c : bytes) {
                h ^= c;
                h *= 1099511628211ULL;
            }
        }
    });
    return h;
}

const lora::RoutedLora* LayerAdapters::adapter(Projection p) const {
    const auto& slot = lora[static_cast<std::size_t>(p)];
    return slot ? &*slot : nullptr;
}

lora::RoutedLora* LayerAdapters::adapter(Projection p) {
    auto& slot = lora[static_cast<std::size_t>(p)];
    return slot ? &*slot : nullptr;
}

QiAdapters QiAdapters::create(const QiConfig& config, const ModelConfig& model) {
    config.validate(model);
    QiAdapters q;
    q.config = config;
    q.layers.resize(model.n_layers);
    for (auto& l : q.layers) {
        for (auto p : config.targets) {
            l.lora[static_cast<std::size_t>(p)].emplace(config.lora, model.d_model, model.d_model);
        }
        l.router = kv::GroupRouter(config.groups, model.d_model);
        l.recon = kv::Reconstructor(model.d_head, config.groups, config.reconstructor_hidden(model));
    }
    return q;
}

void QiAdapters::init(Rng& rng) {
    for (auto& l : layers) {
        for (auto& slot : l.lora) {
            if (slot) slot->init(rng);
        }
        for (double& v : l.router.w.data()) v = rng.normal(0.0, 0.02);
        l.router.b.fill(0.0);
        l.recon.init(rng, 0.02);
    }
}

void QiAdapters::visit_lora(const ParamVisitor& fn) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        for (std::size_t p = 0; p < 4; ++p) {
            auto& slot = layers[i].lora[p];
            if (!slot) continue;
            slot->visit("qi.layer" + std::to_string(i) + ".lora_" + projection_name(static_cast<Projection>(p)) + ".",
                        fn);
        }
    }
}

void QiAdapters::visit_cache(const ParamVisitor& fn) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string p = "qi.layer" + std::to_string(i) + ".";
        layers[i].router.visit(p + "group_router.", fn);
        layers[i].recon.mlp().visit(p + "recon.", fn);
    }
}

void QiAdapters::visit(const ParamVisitor& fn) {
    visit_lora(fn);
    visit_cache(fn);
}

void QiAdapters::cvisit(const ConstParamVisitor& fn) const {
    const_cast<QiAdapters*>(this)->visit([&](const std::string& name, Tensor& t) { fn(name, t); });
}

}  // namespace subtoken::model
