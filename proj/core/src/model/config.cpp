// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/model/config.hpp"

#include <cmath>

#include "subtoken/config_text.hpp"
#include "subtoken/error.hpp"

namespace subtoken::model {

void ModelConfig::validate() const {
    if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_head == 0 || d_ff == 0 ||
        max_seq == 0) {
        throw ConfigError("model: every size must be positive");
    }
    if (n_heads * d_head != d_model) {
        throw ConfigError("model: n_heads * d_head = " + std::to_string(n_heads * d_head) +
                          " differs from d_model = " + std::to_string(d_model));
    }
    if (split_layer && (*split_layer == 0 || *split_layer > n_layers)) {
        throw ConfigError("model: split_layer must lie in [1, " + std::to_string(n_layers) + "]");
    }
}

std::size_t ModelConfig::proportional_split(std::size_t n_layers) {
    // 0.78 * n is computed in integer arithmetic to keep the ceiling exact
    const std::size_t split = (78 * n_layers + 99) / 100;
    return split == 0 ? 1 : split;
}

std::size_t ModelConfig::first_compressed_layer() const {
    return split_layer.value_or(proportional_split(n_layers)) - 1;
}

std::string projection_name(Projection p) {
    switch (p) {
        case Projection::kQuery: return "q";
        case Projection::kKey: return "k";
        case Projection::kValue: return "v";
        case Projection::kOutput: return "o";
    }
    return "?";
}

Projection parse_projection(const std::string& s) {
    if (s == "q") return Projection::kQuery;
    if (s == "k") return Projection::kKey;
    if (s == "v") return Projection::kValue;
    if (s == "o") return Projection::kOutput;
    throw ConfigError("unknown projection '" + s + "' (expected q, k, v or o)");
}

void QiConfig::validate(const ModelConfig& model) const {
    lora.validate();
    if (groups == 0 || model.d_head % groups != 0) {
        throw ConfigError("routing: " + std::to_string(groups) + " groups do not divide d_head " +
                          std::to_string(model.d_head));
    }
    if (keep < 1 || keep > groups) {
        throw ConfigError("routing: keep must lie in [1, groups], got " + std::to_string(keep));
    }
}

std::string to_config_text(const ModelConfig& c) {
    std::string s;
    s += "model.vocab_size=" + std::to_string(c.vocab_size) + "\n";
    s += "model.d_model=" + std::to_string(c.d_model) + "\n";
    s += "model.n_layers=" + std::to_string(c.n_layers) + "\n";
    s += "model.n_heads=" + std::to_string(c.n_heads) + "\n";
    s += "model.d_head=" + std::to_string(c.d_head) + "\n";
    s += "model.d_ff=" + std::to_string(c.d_ff) + "\n";
    s += "model.max_seq=" + std::to_string(c.max_seq) + "\n";
    s += "model.split_layer=" + (c.split_layer ? std::to_string(*c.split_layer) : std::string("auto")) + "\n";
    return s;
}

bool apply_model_key(ModelConfig& c, std::string_view key, std::string_view value) {
    if (!key.starts_with("model.")) return false;
    const auto k = key.substr(6);
    if (k == "vocab_size") c.vocab_size = parse_count(key, value);
    else if (k == "d_model") c.d_model = parse_count(key, value);
    else if (k == "n_layers") c.n_layers = parse_count(key, value);
    else if (k == "n_heads") c.n_heads = parse_count(key, value);
    else if (k == "d_head") c.d_head = parse_count(key, value);
    else if (k == "d_ff") c.d_ff = parse_count(key, value);
    else if (k == "max_seq") c.max_seq = parse_count(key, value);
    else if (k == "split_layer") {
        if (value == "auto") c.split_layer.reset();
        else c.split_layer = parse_count(key, value);
    } else {
        throw ConfigError("config: unknown key '" + std::string(key) + "'");
    }
    return true;
}

std::string to_config_text(const QiConfig& c) {
    std::string targets;
    for (auto p : c.targets) targets += (targets.empty() ? "" : ",") + projection_name(p);
    std::string s;
    s += "lora.subspaces=" + std::to_string(c.lora.subspaces) + "\n";
    s += "lora.top_k=" + std::to_string(c.lora.top_k) + "\n";
    s += "lora.rank=" + std::to_string(c.lora.rank) + "\n";
    s += "lora.alpha=" + format_real(c.lora.alpha) + "\n";
    s += "lora.dropout=" + format_real(c.lora.dropout) + "\n";
    s += "lora.targets=" + targets + "\n";
    s += "routing.enabled=" + std::string(c.value_routing ? "true" : "false") + "\n";
    s += "routing.groups=" + std::to_string(c.groups) + "\n";
    s += "routing.keep=" + std::to_string(c.keep) + "\n";
    s += "routing.recon_hidden=" + std::to_string(c.recon_hidden) + "\n";
    return s;
}

bool apply_qi_key(QiConfig& c, std::string_view key, std::string_view value) {
    if (key == "lora.subspaces") c.lora.subspaces = parse_count(key, value);
    else if (key == "lora.top_k") c.lora.top_k = parse_count(key, value);
    else if (key == "lora.rank") c.lora.rank = parse_count(key, value);
    else if (key == "lora.alpha") c.lora.alpha = parse_real(key, value);
    else if (key == "lora.dropout") c.lora.dropout = parse_real(key, value);
    else if (key == "lora.targets") {
        c.targets.clear();
        std::string_view rest = value;
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            const auto item = rest.substr(0, comma);
            const auto p = parse_projection(std::string(item));
            for (auto q : c.targets) {
                if (q == p) throw ConfigError("config: lora.targets lists '" + std::string(item) + "' twice");
            }
            c.targets.push_back(p);
            rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        }
    } else if (key == "routing.enabled") c.value_routing = parse_flag(key, value);
    else if (key == "routing.groups") c.groups = parse_count(key, value);
    else if (key == "routing.keep") c.keep = parse_count(key, value);
    else if (key == "routing.recon_hidden") c.recon_hidden = parse_count(key, value);
    else if (key.starts_with("lora.") || key.starts_with("routing.")) {
        throw ConfigError("config: unknown key '" + std::string(key) + "'");
    } else {
        return false;
    }
    return true;
}

}  // namespace subtoken::model
