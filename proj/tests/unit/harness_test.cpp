// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "subtoken/error.hpp"
#include "subtoken/harness/commands.hpp"
#include "subtoken/harness/experiments.hpp"
#include "subtoken/harness/grad_suite.hpp"
#include "subtoken/harness/run_config.hpp"
#include "subtoken/model/checkpoint.hpp"
#include "subtoken/qa/sources.hpp"
#include "subtoken/train/corpus.hpp"

namespace subtoken::harness {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("subtoken_harness_test_" + name);
    fs::remove_all(dir);
    return dir;
}

// Small enough to train in a few seconds.
const char* kTinyRun = R"(seed=5
model.d_model=16
model.n_layers=2
model.n_heads=2
model.d_head=8
model.d_ff=32
model.max_seq=64
data.seq_len=40
data.base_synthetic_bytes=20000
data.adapt_synthetic_bytes=12000
pretrain.total_steps=12
pretrain.warmup_steps=2
pretrain.batch=4
pretrain.eval_every=6
pretrain.eval_sequences=4
train.total_steps=6
train.warmup_steps=1
train.batch=2
train.eval_every=3
train.eval_sequences=4
predictor.sequences=12
predictor.epochs=3
eval.sequences=6
diagnostics.sequences=4
)";

TEST(RunConfigTest, RejectsUnknownKeysAndBadValues) {
    RunConfig c;
    EXPECT_THROW(c.set("model.depth", "3"), ConfigError);
    EXPECT_THROW(c.set("train.speed", "3"), ConfigError);
    EXPECT_THROW(c.set("nosection", "1"), ConfigError);
    EXPECT_THROW(c.set("train.lr", "fast"), ConfigError);
    EXPECT_THROW(c.set("eval.mode", "ppl"), ConfigError);
    EXPECT_THROW(c.apply_override("train.lr"), ConfigError);
    EXPECT_THROW(c.apply_text("model.d_model 16\n", "inline"), ConfigError);
    RunConfig bad;
    bad.set("data.seq_len", "8");
    EXPECT_THROW(bad.finalize(""), ConfigError);
}

TEST(RunConfigTest, EchoRoundTripsAndOverridesWin) {
    RunConfig c;
    c.apply_text(kTinyRun, "inline");
    c.apply_override("train.lr=0.002");
    c.apply_override("eval.rhos=0.25,0.75");
    c.finalize("some/dir");
    EXPECT_EQ(c.train.lr, 0.002);
    EXPECT_EQ(c.ckpt.base, "some/dir/base.ckpt");
    EXPECT_EQ(c.train.seed, 6u);
    EXPECT_EQ(c.pretrain.seq_len, 40u);
    RunConfig back;
    back.apply_text(c.to_text(), "echo");
    back.finalize("elsewhere");
    EXPECT_EQ(back.to_text(), c.to_text());
}

TEST(RunConfigTest, BudgetSpecList) {
    const auto specs = parse_budget_specs("1:0.25;0.75:0.5");
    ASSERT_EQ(specs.size(), 2u);
    EXPECT_EQ(specs[1].token_keep, 0.75);
    EXPECT_EQ(specs[1].rho, 0.5);
    EXPECT_THROW(parse_budget_specs("1-0.25"), ConfigError);
    EXPECT_THROW(parse_budget_specs("1:0"), ArgumentError);
}

TEST(BudgetTableTest, CsvIsPinned) {
    RunConfig c;
    const auto rows = budget_table(c.budget_specs);
    EXPECT_EQ(budget_csv(rows),
              "tokens_kept,rho,total_kv,total_kv_pct\n"
              "1.000,0.250,0.625,62.5\n"
              "1.000,0.500,0.750,75.0\n"
              "0.750,0.750,0.656,65.6\n"
              "0.750,0.500,0.562,56.2\n"
              "0.500,0.500,0.375,37.5\n"
              "1.000,1.000,1.000,100.0\n");
}

TEST(SpearmanTest, KnownValues) {
    const std::vector<double> x{1, 2, 3, 4, 5};
    EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{2, 4, 6, 8, 10}), 1.0);
    EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{5, 4, 3, 2, 1}), -1.0);
    EXPECT_EQ(spearman(x, std::vector<double>{3, 3, 3, 3, 3}), 0.0);
    // average ranks for ties: y ranks are 1.5, 1.5, 3, 4, 5
    const std::vector<double> y{0, 0, 1, 2, 3};
    EXPECT_NEAR(spearman(x, y), 9.5 / std::sqrt(10.0 * 9.5), 1e-12);
}

TEST(GradSuiteTest, EveryComponentPasses) {
    const auto entries = run_grad_suite(0);
    EXPECT_EQ(entries.size(), 8u);
    for (const auto& e : entries) {
        EXPECT_TRUE(e.pass()) << e.name << " " << e.max_rel_error;
        EXPECT_GT(e.coordinates, 0u) << e.name;
    }
}

class PipelineTest : public ::testing::Test {
protected:
    static RunConfig config(const fs::path& out, std::vector<std::string> overrides = {}) {
        RunConfig c;
        c.apply_text(kTinyRun, "inline");
        for (const auto& o : overrides) c.apply_override(o);
        c.finalize(out.string());
        return c;
    }

    static void run_all(const fs::path& out) {
        cmd_pretrain_base(config(out), out.string());
        cmd_train_qi(config(out), out.string());
        cmd_train_predictor(config(out), out.string());
        cmd_eval(config(out, {"qa.selector=predictor"}), out.string());
        cmd_eval(config(out, {"eval.mode=qi"}), out.string());
        cmd_diagnostics(config(out), out.string());
    }
};

TEST_F(PipelineTest, SeededRunsAreByteIdentical) {
    const auto a = scratch("run_a"), b = scratch("run_b");
    run_all(a);
    run_all(b);
    for (const char* f : {"metrics.jsonl", "base.ckpt", "qi.ckpt", "predictor.ckpt", "eval_qa.csv",
                          "predictor_overlap.csv", "diagnostics.csv", "diagnostics_summary.csv"}) {
        ASSERT_TRUE(fs::exists(a / f)) << f;
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    }
    // the echoed config reproduces the run
    RunConfig echoed;
    echoed.apply_text(slurp(a / "config.txt"), "config.txt");
    EXPECT_NE(echoed.to_text().find("seed=5\n"), std::string::npos);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_F(PipelineTest, CsvSchemasArePinned) {
    const auto out = scratch("schemas");
    cmd_pretrain_base(config(out), out.string());
    const auto e = cmd_eval(config(out), out.string());
    ASSERT_EQ(e.qa_rows.size(), 4u);
    const auto full = e.qa_rows.back();
    EXPECT_EQ(full.rho, 1.0);
    EXPECT_EQ(full.agreement, 1.0);
    EXPECT_LT(full.mean_kl, 1e-9);
    const std::string qa_csv = slurp(out / "eval_qa.csv");
    EXPECT_EQ(qa_csv.substr(0, qa_csv.find('\n')),
              "rho,token_keep,total_kv,measured_total_kv,agreement,mean_kl,kept_score_global,kept_score_fixed_k,"
              "matched_budget");
    cmd_diagnostics(config(out), out.string());
    const std::string diag = slurp(out / "diagnostics.csv");
    EXPECT_EQ(diag.substr(0, diag.find('\n')), "sequence,token_index,alpha,K_j,norm_g0,norm_g1,norm_g2,norm_g3,mask_bits");
    const std::string summary = slurp(out / "diagnostics_summary.csv");
    EXPECT_EQ(summary.substr(0, summary.find('\n')),
              "tokens,mean_k,expected_k,distinct_k,spearman,degenerate,hist_k0,hist_k1,hist_k2,hist_k3,hist_k4");
    cmd_grad_check(config(out), out.string());
    const std::string grad = slurp(out / "grad_check.csv");
    EXPECT_EQ(grad.substr(0, grad.find('\n')), "check,max_rel_error,coordinates,attempts,pass");
    fs::remove_all(out);
}

TEST_F(PipelineTest, MissingCheckpointIsAFileError) {
    const auto out = scratch("missing");
    EXPECT_THROW(cmd_train_qi(config(out), out.string()), FileError);
    EXPECT_THROW(cmd_eval(config(out), out.string()), FileError);
    fs::remove_all(out);
}

TEST_F(PipelineTest, DiagnosticsFlagDegenerateScores) {
    const auto out = scratch("degenerate");
    cmd_pretrain_base(config(out), out.string());
    auto ckpt = model::read_checkpoint((out / "base.ckpt").string());
    auto model = model::load_base(ckpt);
    // equal attention logits make alpha constant; zero values make every group norm 0
    const auto& cfg = model.config();
    model.base().layers[qa::default_probe_layer(cfg)].wq.fill(0.0);
    model.base().layers[qa::default_probe_layer(cfg)].wk.fill(0.0);
    model.base().layers[cfg.first_compressed_layer()].wv.fill(0.0);
    const auto c = config(out);
    const auto corpus = load_corpus(c.data.base, c.data, c.seed);
    const auto inputs = sample_inputs(corpus.val(), 3, 1);
    const auto r = run_diagnostics(model, inputs, c.qa, 0.25);
    EXPECT_TRUE(r.summary.degenerate);
    EXPECT_DOUBLE_EQ(r.summary.mean_k, 1.0);
    fs::remove_all(out);
}

}  // namespace
}  // namespace subtoken::harness
