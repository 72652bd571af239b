// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/harness/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "subtoken/error.hpp"
#include "subtoken/model/checkpoint.hpp"

namespace subtoken::harness {

namespace {

void prepare(const RunConfig& config, const std::string& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw FileError("cannot create output directory '" + out_dir + "': " + ec.message());
    write_text(out_dir, "config.txt", config.to_text());
}

std::string metrics_path(const std::string& out_dir) { return out_dir + "/metrics.jsonl"; }

model::Checkpoint require_checkpoint(const std::string& path, const char* what) {
    if (!std::filesystem::exists(path)) {
        throw FileError(std::string("missing ") + what + " checkpoint '" + path + "'");
    }
    return model::read_checkpoint(path);
}

model::Transformer load_base_from(const RunConfig& config) {
    auto model = model::load_base(require_checkpoint(config.ckpt.base, "base"));
    if (model::to_config_text(model.config()) != model::to_config_text(config.model)) {
        throw ConfigError("base checkpoint '" + config.ckpt.base + "' does not match the model.* settings");
    }
    return model;
}

}  // namespace

void write_text(const std::string& dir, const std::string& name, const std::string& text) {
    const std::string path = dir + "/" + name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FileError("cannot write '" + path + "'");
    out << text;
    if (!out) throw FileError("error writing '" + path + "'");
}

void cmd_make_corpus(const RunConfig& config, const std::string& out_dir) {
    prepare(config, out_dir);
    write_text(out_dir, "base_corpus.txt", corpus_text(config.data.base, config.seed));
    write_text(out_dir, "adapt_corpus.txt", corpus_text(config.data.adapt, config.seed));
}

train::TrainSummary cmd_pretrain_base(const RunConfig& config, const std::string& out_dir) {
    prepare(config, out_dir);
    auto corpus = load_corpus(config.data.base, config.data, config.seed);
    train::JsonlMetrics metrics(metrics_path(out_dir));
    train::TrainSummary summary;
    const auto model = train::pretrain_base(config.model, corpus, config.pretrain, &metrics, &summary);
    model::write_checkpoint(config.ckpt.base, model::base_checkpoint(model));
    return summary;
}

train::TrainSummary cmd_train_qi(const RunConfig& config, const std::string& out_dir) {
    prepare(config, out_dir);
    auto model = load_base_from(config);
    if (!model.base().frozen) throw ConfigError("base checkpoint '" + config.ckpt.base + "' is not frozen");
    auto adapters = model::QiAdapters::create(config.qi, config.model);
    Rng rng(config.train.seed);
    adapters.init(rng);
    model.attach_qi(std::move(adapters));
    auto corpus = load_corpus(config.data.adapt, config.data, config.seed);
    train::JsonlMetrics metrics(metrics_path(out_dir));
    const auto summary = train::train_qi(model, corpus, config.train, &metrics);
    model::write_checkpoint(config.ckpt.qi, model::qi_checkpoint(model));
    return summary;
}

train::PredictorBundle cmd_train_predictor(const RunConfig& config, const std::string& out_dir) {
    prepare(config, out_dir);
    const auto model = load_base_from(config);
    const auto corpus = load_corpus(config.data.base, config.data, config.seed);
    train::JsonlMetrics metrics(metrics_path(out_dir));
    auto bundle = train::train_predictor(model, corpus.train(), config.predictor, &metrics);
    model::write_checkpoint(config.ckpt.predictor, train::predictor_checkpoint(bundle, config.model));
    return bundle;
}

EvalOutcome cmd_eval(const RunConfig& config, const std::string& out_dir) {
    prepare(config, out_dir);
    EvalOutcome outcome;
    auto model = load_base_from(config);
    if (config.eval.mode == "qi" || config.eval.mode == "baseline") {
        const bool qi = config.eval.mode == "qi";
        if (qi) model::load_qi(require_checkpoint(config.ckpt.qi, "adapter"), model);
        const auto corpus = load_corpus(config.data.adapt, config.data, config.seed);
        kv::RetentionStats stats;
        const double loss = train::evaluate_lm(model, qi ? model::Mode::kQiRouted : model::Mode::kBaseline,
                                               corpus.val(), config.eval.sequences, &stats);
        train::MetricRecord r;
        r.phase = "eval";
        r.val_loss = loss;
        r.val_ppl = std::exp(loss);
        r.tokens_kept = stats.tokens_kept;
        r.rho = stats.rho;
        r.total_kv = stats.total_kv;
        train::JsonlMetrics(metrics_path(out_dir)).write(r);
        outcome.val_loss = loss;
        return outcome;
    }

    const auto corpus = load_corpus(config.data.base, config.data, config.seed);
    const auto inputs = sample_inputs(corpus.val(), config.eval.sequences, config.seed);
    std::optional<train::PredictorBundle> predictor;
    if (config.qa.selector == "predictor") {
        predictor = train::load_predictor(require_checkpoint(config.ckpt.predictor, "predictor"), config.model);
    }
    outcome.qa_rows = qa_eval(model, inputs, config.qa, config.eval.rhos, predictor ? &*predictor : nullptr);
    write_text(out_dir, "eval_qa.csv", qa_eval_csv(outcome.qa_rows));
    if (predictor) {
        outcome.overlap = predictor_overlap(model, *predictor, inputs, config.qa, config.qa.rho, config.seed);
        char buf[128];
        std::snprintf(buf, sizeof buf, "rho,sequences,jaccard,random_jaccard\n%.3f,%zu,%.6f,%.6f\n", config.qa.rho,
                      outcome.overlap->sequences, outcome.overlap->jaccard, outcome.overlap->random_jaccard);
        write_text(out_dir, "predictor_overlap.csv", buf);
    }
    return outcome;
}

DiagnosticsResult cmd_diagnostics(const RunConfig& config, const std::string& out_dir) {
    prepare(config, out_dir);
    const auto model = load_base_from(config);
    const auto corpus = load_corpus(config.data.base, config.data, config.seed);
    const auto inputs = sample_inputs(corpus.val(), config.diagnostics.sequences, config.seed);
    auto result = run_diagnostics(model, inputs, config.qa, config.diagnostics.rho);
    write_text(out_dir, "diagnostics.csv", diagnostics_csv(result));
    write_text(out_dir, "diagnostics_summary.csv", diagnostics_summary_csv(result.summary));
    return result;
}

std::vector<BudgetRow> cmd_budget_table(const RunConfig& config, const std::string& out_dir) {
    prepare(config, out_dir);
    auto rows = budget_table(config.budget_specs);
    write_text(out_dir, "budget.csv", budget_csv(rows));
    return rows;
}

std::vector<GradCheckEntry> cmd_grad_check(const RunConfig& config, const std::string& out_dir) {
    prepare(config, out_dir);
    auto entries = run_grad_suite(config.seed);
    std::string csv = "check,max_rel_error,coordinates,attempts,pass\n";
    for (const auto& e : entries) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s,%.3e,%zu,%zu,%d\n", e.name.c_str(), e.max_rel_error, e.coordinates,
                      e.attempts, e.pass() ? 1 : 0);
        csv += buf;
    }
    write_text(out_dir, "grad_check.csv", csv);
    return entries;
}

}  // namespace subtoken::harness
