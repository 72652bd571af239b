// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/harness/run_config.hpp"

#include "subtoken/config_text.hpp"
#include "subtoken/error.hpp"
#include "subtoken/train/corpus.hpp"

namespace subtoken::harness {

namespace {

std::string join_reals(const std::vector<double>& v, char sep) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? std::string(1, sep) : "") + format_real(v[i]);
    return s;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
    std::vector<std::string_view> out;
    while (!text.empty()) {
        const auto p = text.find(sep);
        out.push_back(text.substr(0, p));
        text = p == std::string_view::npos ? std::string_view{} : text.substr(p + 1);
    }
    return out;
}

bool set_train(train::TrainConfig& t, std::string_view name, std::string_view key, std::string_view value) {
    if (name == "lr") t.lr = parse_real(key, value);
    else if (name == "weight_decay") t.weight_decay = parse_real(key, value);
    else if (name == "beta1") t.beta1 = parse_real(key, value);
    else if (name == "beta2") t.beta2 = parse_real(key, value);
    else if (name == "eps") t.eps = parse_real(key, value);
    else if (name == "warmup_steps") t.warmup_steps = parse_count(key, value);
    else if (name == "total_steps") t.total_steps = parse_count(key, value);
    else if (name == "lambda_aux") t.lambda_aux = parse_real(key, value);
    else if (name == "lambda_lb") t.lambda_lb = parse_real(key, value);
    else if (name == "batch") t.batch = parse_count(key, value);
    else if (name == "eval_every") t.eval_every = parse_count(key, value);
    else if (name == "eval_sequences") t.eval_sequences = parse_count(key, value);
    else return false;
    return true;
}

std::string train_text(const train::TrainConfig& t, const std::string& p) {
    std::string s;
    s += p + "lr=" + format_real(t.lr) + "\n";
    s += p + "weight_decay=" + format_real(t.weight_decay) + "\n";
    s += p + "beta1=" + format_real(t.beta1) + "\n";
    s += p + "beta2=" + format_real(t.beta2) + "\n";
    s += p + "eps=" + format_real(t.eps) + "\n";
    s += p + "warmup_steps=" + std::to_string(t.warmup_steps) + "\n";
    s += p + "total_steps=" + std::to_string(t.total_steps) + "\n";
    s += p + "lambda_aux=" + format_real(t.lambda_aux) + "\n";
    s += p + "lambda_lb=" + format_real(t.lambda_lb) + "\n";
    s += p + "batch=" + std::to_string(t.batch) + "\n";
    s += p + "eval_every=" + std::to_string(t.eval_every) + "\n";
    s += p + "eval_sequences=" + std::to_string(t.eval_sequences) + "\n";
    return s;
}

}  // namespace

std::vector<double> parse_real_list(std::string_view key, std::string_view text) {
    std::vector<double> out;
    for (auto item : split(text, ',')) out.push_back(parse_real(key, item));
    if (out.empty()) throw ConfigError("config: " + std::string(key) + " expects a non-empty list");
    return out;
}

std::vector<kv::BudgetSpec> parse_budget_specs(std::string_view text) {
    std::vector<kv::BudgetSpec> out;
    for (auto item : split(text, ';')) {
        const auto colon = item.find(':');
        if (colon == std::string_view::npos) {
            throw ConfigError("config: budget.specs entry '" + std::string(item) + "' is not token_keep:rho");
        }
        kv::BudgetSpec spec;
        spec.token_keep = parse_real("budget.specs", item.substr(0, colon));
        spec.rho = parse_real("budget.specs", item.substr(colon + 1));
        spec.validate();
        out.push_back(spec);
    }
    if (out.empty()) throw ConfigError("config: budget.specs is empty");
    return out;
}

RunConfig::RunConfig() {
    pretrain.lr = 1e-3;
    pretrain.total_steps = 2000;
    pretrain.warmup_steps = 100;
    train.total_steps = 2000;
    train.warmup_steps = 100;
    budget_specs = parse_budget_specs("1:0.25;1:0.5;0.75:0.75;0.75:0.5;0.5:0.5;1:1");
}

void RunConfig::set(std::string_view key, std::string_view value) {
    const auto dot = key.find('.');
    const std::string_view section = dot == std::string_view::npos ? std::string_view{} : key.substr(0, dot);
    const std::string_view name = dot == std::string_view::npos ? key : key.substr(dot + 1);
    bool ok = true;
    if (key == "seed") {
        seed = parse_count(key, value);
    } else if (section == "model") {
        model::apply_model_key(model, key, value);
    } else if (section == "lora" || section == "routing") {
        model::apply_qi_key(qi, key, value);
    } else if (section == "pretrain") {
        ok = set_train(pretrain, name, key, value);
    } else if (section == "train") {
        ok = set_train(train, name, key, value);
    } else if (section == "predictor") {
        if (name == "sequences") predictor.sequences = parse_count(key, value);
        else if (name == "epochs") predictor.epochs = parse_count(key, value);
        else if (name == "batch_rows") predictor.batch_rows = parse_count(key, value);
        else if (name == "lr") predictor.lr = parse_real(key, value);
        else if (name == "weight_decay") predictor.weight_decay = parse_real(key, value);
        else ok = false;
    } else if (section == "qa") {
        if (name == "query_len") qa.query_len = parse_count(key, value);
        else if (name == "groups") qa.groups = parse_count(key, value);
        else if (name == "rho") qa.rho = parse_real(key, value);
        else if (name == "token_keep") qa.token_keep = parse_real(key, value);
        else if (name == "probe_layer") {
            if (value == "auto") qa.probe_layer.reset();
            else qa.probe_layer = parse_count(key, value);
        } else if (name == "selector") {
            if (value != "oracle" && value != "predictor") {
                throw ConfigError("config: qa.selector must be oracle or predictor");
            }
            qa.selector = std::string(value);
        } else {
            ok = false;
        }
    } else if (section == "eval") {
        if (name == "mode") {
            if (value != "qa" && value != "qi" && value != "baseline") {
                throw ConfigError("config: eval.mode must be qa, qi or baseline");
            }
            eval.mode = std::string(value);
        } else if (name == "sequences") {
            eval.sequences = parse_count(key, value);
        } else if (name == "rhos") {
            eval.rhos = parse_real_list(key, value);
        } else {
            ok = false;
        }
    } else if (section == "diagnostics") {
        if (name == "rho") diagnostics.rho = parse_real(key, value);
        else if (name == "sequences") diagnostics.sequences = parse_count(key, value);
        else ok = false;
    } else if (section == "data") {
        if (name == "base_corpus") data.base.spec = std::string(value);
        else if (name == "adapt_corpus") data.adapt.spec = std::string(value);
        else if (name == "base_synthetic_bytes") data.base.synthetic_bytes = parse_count(key, value);
        else if (name == "adapt_synthetic_bytes") data.adapt.synthetic_bytes = parse_count(key, value);
        else if (name == "seq_len") data.seq_len = parse_count(key, value);
        else if (name == "val_fraction") data.val_fraction = parse_real(key, value);
        else ok = false;
    } else if (section == "ckpt") {
        if (name == "base") ckpt.base = std::string(value);
        else if (name == "qi") ckpt.qi = std::string(value);
        else if (name == "predictor") ckpt.predictor = std::string(value);
        else ok = false;
    } else if (key == "budget.specs") {
        budget_specs = parse_budget_specs(value);
    } else {
        ok = false;
    }
    if (!ok) throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

void RunConfig::apply_text(std::string_view text, std::string_view origin) {
    for (const auto& [k, v] : parse_key_values(text, origin)) set(k, v);
}

void RunConfig::apply_file(const std::string& path) { apply_text(train::read_text_file(path), path); }

void RunConfig::apply_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
        throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
    }
    set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void RunConfig::finalize(const std::string& out_dir) {
    const std::string prefix = out_dir.empty() ? std::string() : out_dir + "/";
    if (ckpt.base.empty()) ckpt.base = prefix + "base.ckpt";
    if (ckpt.qi.empty()) ckpt.qi = prefix + "qi.ckpt";
    if (ckpt.predictor.empty()) ckpt.predictor = prefix + "predictor.ckpt";
    pretrain.seq_len = data.seq_len;
    train.seq_len = data.seq_len;
    pretrain.seed = seed;
    train.seed = seed + 1;
    predictor.seed = seed + 2;
    predictor.query_len = qa.query_len;
    predictor.groups = qa.groups;

    model.validate();
    qi.validate(model);
    pretrain.validate();
    train.validate();
    if (data.seq_len > model.max_seq) throw ConfigError("config: data.seq_len exceeds model.max_seq");
    if (data.seq_len <= qa.query_len) throw ConfigError("config: data.seq_len must exceed qa.query_len");
    if (qa.groups == 0 || model.d_head % qa.groups != 0) throw ConfigError("config: qa.groups must divide d_head");
    kv::BudgetSpec{qa.rho, qa.groups, qa.token_keep, 0, 0}.validate();
    kv::BudgetSpec{diagnostics.rho, qa.groups, 1.0, 0, 0}.validate();
    for (double r : eval.rhos) kv::BudgetSpec{r, qa.groups, qa.token_keep, 0, 0}.validate();
    if (qa.probe_layer && *qa.probe_layer >= model.first_compressed_layer() && model.first_compressed_layer() > 0) {
        throw ConfigError("config: qa.probe_layer must precede the first compressed layer");
    }
}

std::string RunConfig::to_text() const {
    std::string s = "seed=" + std::to_string(seed) + "\n";
    s += model::to_config_text(model);
    s += model::to_config_text(qi);
    s += train_text(pretrain, "pretrain.");
    s += train_text(train, "train.");
    s += "predictor.sequences=" + std::to_string(predictor.sequences) + "\n";
    s += "predictor.epochs=" + std::to_string(predictor.epochs) + "\n";
    s += "predictor.batch_rows=" + std::to_string(predictor.batch_rows) + "\n";
    s += "predictor.lr=" + format_real(predictor.lr) + "\n";
    s += "predictor.weight_decay=" + format_real(predictor.weight_decay) + "\n";
    s += "qa.query_len=" + std::to_string(qa.query_len) + "\n";
    s += "qa.groups=" + std::to_string(qa.groups) + "\n";
    s += "qa.rho=" + format_real(qa.rho) + "\n";
    s += "qa.token_keep=" + format_real(qa.token_keep) + "\n";
    s += "qa.probe_layer=" + (qa.probe_layer ? std::to_string(*qa.probe_layer) : std::string("auto")) + "\n";
    s += "qa.selector=" + qa.selector + "\n";
    s += "eval.mode=" + eval.mode + "\n";
    s += "eval.sequences=" + std::to_string(eval.sequences) + "\n";
    s += "eval.rhos=" + join_reals(eval.rhos, ',') + "\n";
    s += "diagnostics.rho=" + format_real(diagnostics.rho) + "\n";
    s += "diagnostics.sequences=" + std::to_string(diagnostics.sequences) + "\n";
    s += "data.base_corpus=" + data.base.spec + "\n";
    s += "data.adapt_corpus=" + data.adapt.spec + "\n";
    s += "data.base_synthetic_bytes=" + std::to_string(data.base.synthetic_bytes) + "\n";
    s += "data.adapt_synthetic_bytes=" + std::to_string(data.adapt.synthetic_bytes) + "\n";
    s += "data.seq_len=" + std::to_string(data.seq_len) + "\n";
    s += "data.val_fraction=" + format_real(data.val_fraction) + "\n";
    if (!ckpt.base.empty()) s += "ckpt.base=" + ckpt.base + "\n";
    if (!ckpt.qi.empty()) s += "ckpt.qi=" + ckpt.qi + "\n";
    if (!ckpt.predictor.empty()) s += "ckpt.predictor=" + ckpt.predictor + "\n";
    std::string specs;
    for (const auto& b : budget_specs) {
        specs += (specs.empty() ? "" : ";") + format_real(b.token_keep) + ":" + format_real(b.rho);
    }
    s += "budget.specs=" + specs + "\n";
    return s;
}

}  // namespace subtoken::harness
