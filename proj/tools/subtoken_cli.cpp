// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line harness: one subcommand per experiment stage.

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "subtoken/error.hpp"
#include "subtoken/harness/commands.hpp"

namespace {

using subtoken::harness::RunConfig;

struct Options {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
};

RunConfig resolve(const Options& opts) {
    RunConfig cfg;
    if (!opts.config_path.empty()) cfg.apply_file(opts.config_path);
    for (const auto& o : opts.overrides) cfg.apply_override(o);
    if (opts.seed) cfg.seed = *opts.seed;
    cfg.finalize(opts.out_dir);
    return cfg;
}

int run(const std::string& command, const Options& opts) {
    namespace h = subtoken::harness;
    const RunConfig cfg = resolve(opts);
    const std::string& out = opts.out_dir;
    if (command == "make-corpus") {
        h::cmd_make_corpus(cfg, out);
        std::printf("wrote %s/base_corpus.txt and %s/adapt_corpus.txt\n", out.c_str(), out.c_str());
    } else if (command == "pretrain-base") {
        const auto s = h::cmd_pretrain_base(cfg, out);
        std::printf("pretrain-base: %zu steps, val loss %.4f -> %.4f, wrote %s\n", s.steps, s.initial_val_loss,
                    s.final_val_loss, cfg.ckpt.base.c_str());
    } else if (command == "train-qi") {
        const auto s = h::cmd_train_qi(cfg, out);
        std::printf("train-qi: %zu steps, val loss %.4f -> %.4f, wrote %s\n", s.steps, s.initial_val_loss,
                    s.final_val_loss, cfg.ckpt.qi.c_str());
    } else if (command == "train-predictor") {
        const auto b = h::cmd_train_predictor(cfg, out);
        std::printf("train-predictor: %zu rows, group loss %.4f, token loss %.4f, wrote %s\n", b.rows, b.group_loss,
                    b.token_loss, cfg.ckpt.predictor.c_str());
    } else if (command == "eval") {
        const auto e = h::cmd_eval(cfg, out);
        if (e.val_loss) std::printf("eval %s: val loss %.4f\n", cfg.eval.mode.c_str(), *e.val_loss);
        for (const auto& r : e.qa_rows) {
            std::printf("eval qa: rho %.3f total_kv %.4f agreement %.4f kl %.3e kept(global) %.4f kept(fixed-K) %.4f\n",
                        r.rho, r.total_kv, r.agreement, r.mean_kl, r.kept_global, r.kept_fixed_k);
        }
        if (e.overlap) {
            std::printf("predictor overlap: jaccard %.4f random %.4f\n", e.overlap->jaccard, e.overlap->random_jaccard);
        }
    } else if (command == "diagnostics") {
        const auto d = h::cmd_diagnostics(cfg, out);
        std::printf("diagnostics: %zu tokens, mean K %.4f, distinct K %zu, spearman %.4f%s\n", d.summary.tokens,
                    d.summary.mean_k, d.summary.distinct_k, d.summary.spearman,
                    d.summary.degenerate ? " (degenerate scores)" : "");
    } else if (command == "budget-table") {
        std::printf("%s", h::budget_csv(h::cmd_budget_table(cfg, out)).c_str());
    } else if (command == "grad-check") {
        bool ok = true;
        for (const auto& e : h::cmd_grad_check(cfg, out)) {
            std::printf("%-16s max rel err %.3e over %zu coordinates %s\n", e.name.c_str(), e.max_rel_error,
                        e.coordinates, e.pass() ? "ok" : "FAIL");
            ok = ok && e.pass();
        }
        if (!ok) {
            std::fprintf(stderr, "error: gradient check exceeded tolerance %.0e\n", h::kGradTolerance);
            return 1;
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sub-token value-group routing toolkit"};
    app.require_subcommand(1);
    Options opts;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"make-corpus", "write the synthetic base and adaptation corpora"},
        {"pretrain-base", "pretrain and freeze the base model"},
        {"train-qi", "train routed LoRA with value-group routing"},
        {"train-predictor", "fit the value-group and token relevance predictors"},
        {"eval", "evaluate perplexity (qi/baseline) or compressed agreement (qa)"},
        {"diagnostics", "per-token allocation statistics of the oracle selector"},
        {"budget-table", "total KV retention for budget.specs"},
        {"grad-check", "finite-difference check of every learned component"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opts.config_path, "key=value config file")->check(CLI::ExistingFile);
        sub->add_option("--set", opts.overrides, "override key=value (repeatable)");
        sub->add_option("--out", opts.out_dir, "output directory");
        sub->add_option("--seed", opts.seed, "run seed");
    }
    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return run(command, opts);
    } catch (const subtoken::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
