// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "subtoken/error.hpp"
#include "subtoken/model/checkpoint.hpp"
#include "subtoken/numerics/ops.hpp"
#include "subtoken/train/corpus.hpp"
#include "subtoken/train/losses.hpp"
#include "subtoken/train/optimizer.hpp"
#include "subtoken/train/trainer.hpp"

namespace subtoken::train {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.normal(0.0, scale);
    return t;
}

model::ModelConfig tiny_config() {
    model::ModelConfig c;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_head = 8;
    c.d_ff = 32;
    c.max_seq = 64;
    return c;
}

TEST(LossLmTest, UniformAndConfidentLogits) {
    const std::vector<std::size_t> targets{0, 3, 2};
    EXPECT_NEAR(loss_lm(Tensor({3, 5}), targets), std::log(5.0), 1e-12);
    Tensor sure({3, 5});
    for (std::size_t t = 0; t < 3; ++t) sure(t, targets[t]) = 60.0;
    EXPECT_LT(loss_lm(sure, targets), 1e-20);
    EXPECT_THROW(loss_lm(Tensor({3, 5}), std::vector<std::size_t>{0, 9, 1}), ArgumentError);
}

TEST(LossLmTest, MatchesLoopOracleWithGradient) {
    Rng rng(71);
    const Tensor logits = random_tensor({4, 6}, rng, 2.0);
    const std::vector<std::size_t> targets{5, 0, 2, 2};
    Tensor d;
    const double loss = loss_lm(logits, targets, &d);
    double want = 0.0;
    for (std::size_t t = 0; t < 4; ++t) {
        double z = 0.0;
        for (std::size_t c = 0; c < 6; ++c) z += std::exp(logits(t, c));
        want -= std::log(std::exp(logits(t, targets[t])) / z) / 4.0;
        for (std::size_t c = 0; c < 6; ++c) {
            const double p = std::exp(logits(t, c)) / z;
            EXPECT_NEAR(d(t, c), (p - (c == targets[t] ? 1.0 : 0.0)) / 4.0, 1e-12);
        }
    }
    EXPECT_NEAR(loss, want, 1e-10);
}

TEST(LossAuxTest, PerfectReconstructionIsZero) {
    Rng rng(72);
    const Tensor v = random_tensor({3, 16}, rng);
    const Tensor vhat = v.reshaped({6, 8});
    const auto l = loss_aux(vhat, v, random_tensor({3, 4}, rng), 2);
    EXPECT_EQ(l.total, 0.0);
}

TEST(LossAuxTest, MatchesLoopOracle) {
    Rng rng(73);
    const std::size_t tokens = 3, heads = 2, dh = 8, groups = 4;
    const Tensor v = random_tensor({tokens, heads * dh}, rng);
    const Tensor vhat = random_tensor({tokens * heads, dh}, rng);
    const Tensor scores = random_tensor({tokens, groups}, rng);
    const auto l = loss_aux(vhat, v, scores, heads);
    const Tensor p = softmax_rows(scores);
    double rec = 0.0, coup = 0.0;
    for (std::size_t t = 0; t < tokens; ++t) {
        for (std::size_t g = 0; g < groups; ++g) {
            double e = 0.0;
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = g * 2; i < g * 2 + 2; ++i) {
                    const double diff = vhat(t * heads + h, i) - v(t, h * dh + i);
                    e += diff * diff;
                    rec += diff * diff;
                }
            }
            coup += (1.0 - p(t, g)) * e / static_cast<double>(heads * 2);
        }
    }
    rec /= static_cast<double>(tokens * heads * dh);
    coup /= static_cast<double>(tokens * groups);
    EXPECT_NEAR(l.reconstruction, rec, 1e-12);
    EXPECT_NEAR(l.coupling, coup, 1e-12);
    EXPECT_NEAR(l.total, rec + coup, 1e-12);
}

TEST(LoadBalanceTest, ClosedForms) {
    // uniform probabilities, K = 2 of S = 4 spread evenly over 8 rows
    EXPECT_NEAR(loss_load_balance(Tensor({8, 4}), std::vector<std::size_t>{4, 4, 4, 4}), 2.0, 1e-12);
    // collapse: every row keeps group 1 with probability one
    Tensor p({5, 4});
    for (std::size_t t = 0; t < 5; ++t) p(t, 1) = 1.0;
    EXPECT_NEAR(load_balance_from_probs(p, std::vector<std::size_t>{0, 5, 0, 0}), 4.0, 1e-12);
}

TEST(LoadBalanceTest, MatchesLoopOracle) {
    Rng rng(74);
    const Tensor scores = random_tensor({6, 4}, rng);
    const std::vector<std::size_t> counts{1, 4, 5, 2};
    const Tensor p = softmax_rows(scores);
    double want = 0.0;
    for (std::size_t s = 0; s < 4; ++s) {
        double pbar = 0.0;
        for (std::size_t t = 0; t < 6; ++t) pbar += p(t, s) / 6.0;
        want += 4.0 * (static_cast<double>(counts[s]) / 6.0) * pbar;
    }
    EXPECT_NEAR(loss_load_balance(scores, counts), want, 1e-12);
}

TEST(LossPredictorTest, ExamplesAndOracle) {
    Rng rng(75);
    const Tensor target = random_tensor({50, 4}, rng);
    EXPECT_EQ(loss_predictor(target, target), 0.0);
    // standardized targets: the zero predictor scores the per-column variance, 1
    const Tensor big = random_tensor({20000, 1}, rng);
    EXPECT_NEAR(loss_predictor(Tensor({20000, 1}), big), 1.0, 0.05);
    const Tensor pred = random_tensor({50, 4}, rng);
    Tensor d;
    double want = 0.0;
    for (std::size_t i = 0; i < 200; ++i) want += std::pow(pred[i] - target[i], 2) / 200.0;
    EXPECT_NEAR(loss_predictor(pred, target, &d), want, 1e-12);
    EXPECT_NEAR(d[7], 2.0 * (pred[7] - target[7]) / 200.0, 1e-15);
}

TEST(ScheduleTest, Endpoints) {
    TrainConfig c;
    c.lr = 1e-3;
    c.warmup_steps = 10;
    c.total_steps = 110;
    EXPECT_EQ(lr_at(0, c), 0.0);
    EXPECT_DOUBLE_EQ(lr_at(5, c), 5e-4);
    EXPECT_DOUBLE_EQ(lr_at(10, c), 1e-3);
    EXPECT_DOUBLE_EQ(lr_at(60, c), 5e-4);
    EXPECT_NEAR(lr_at(110, c), 0.0, 1e-20);
    EXPECT_THROW(lr_at(111, c), ArgumentError);
    c.warmup_steps = 200;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(AdamWTest, MatchesScalarReference) {
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01, lr = 0.1;
    Tensor p = Tensor::vector({1.0});
    p.enable_grad();
    AdamW opt(b1, b2, eps, wd);
    double ref = 1.0, m = 0.0, v = 0.0;
    const double grads[] = {0.5, -0.2, 0.05};
    for (int t = 1; t <= 3; ++t) {
        const double g = grads[t - 1];
        p.grad()[0] = g;
        opt.step({&p}, lr);
        ref -= lr * wd * ref;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
        ref -= lr * mh / (std::sqrt(vh) + eps);
        EXPECT_NEAR(p[0], ref, 1e-15) << "step " << t;
    }
    EXPECT_EQ(opt.steps_taken(), 3u);
}

TEST(CorpusTest, ChunkLayoutAndSplit) {
    EXPECT_EQ(decode_bytes(encode_bytes("h\xc3\xa9llo")), "h\xc3\xa9llo");
    EXPECT_EQ(encode_bytes("\xff")[0], 255u);
    std::string text;
    for (int i = 0; i < 100; ++i) text += static_cast<char>('a' + i % 26);
    CorpusStream c(text, 10, 0.2, 1);
    EXPECT_EQ(c.train().size() + c.val().size(), 10u);
    EXPECT_EQ(c.val().size(), 2u);
    const auto& first = c.train().front();
    ASSERT_EQ(first.size(), 11u);
    EXPECT_EQ(first[0], model::kBosToken);
    EXPECT_EQ(decode_bytes(first), text.substr(0, 10));
    EXPECT_EQ(decode_bytes(c.val().back()), text.substr(90, 10));
    EXPECT_EQ(chunk_inputs(first).size(), 10u);
    EXPECT_EQ(chunk_targets(first)[0], first[1]);
    EXPECT_THROW(CorpusStream::from_file("/nonexistent/corpus.txt", 10, 0.1, 0), FileError);
}

TEST(CorpusTest, ShuffleIsSeeded) {
    const std::string text = synthetic_corpus(SyntheticDomain::kLogs, 5000, 3);
    EXPECT_GE(text.size(), 5000u);
    EXPECT_EQ(text, synthetic_corpus(SyntheticDomain::kLogs, 5000, 3));
    EXPECT_NE(text, synthetic_corpus(SyntheticDomain::kLogs, 5000, 4));
    CorpusStream a(text, 32, 0.1, 9), b(text, 32, 0.1, 9);
    for (int i = 0; i < 50; ++i) {
        const auto x = a.next_batch(4), y = b.next_batch(4);
        for (std::size_t k = 0; k < 4; ++k) ASSERT_EQ(*x[k], *y[k]);
    }
    EXPECT_GE(a.epoch(), 1u);
}

TEST(MetricsTest, JsonLineSchemaIsPinned) {
    MetricRecord r;
    r.phase = "qi";
    r.step = 3;
    const std::string line = to_json_line(r);
    EXPECT_EQ(line.find("{\"phase\":\"qi\",\"step\":3,\"lm_loss\":"), 0u);
    for (const char* key : {"aux_loss", "lb_loss", "val_loss", "val_ppl", "tokens_kept", "rho", "total_kv"}) {
        EXPECT_NE(line.find(std::string("\"") + key + "\":"), std::string::npos) << key;
    }
    EXPECT_EQ(line.find('\n'), std::string::npos);
}

class TinyTraining : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        text_ = new std::string(synthetic_corpus(SyntheticDomain::kProse, 20000, 1));
        CorpusStream corpus(*text_, 32, 0.1, 2);
        TrainConfig t;
        t.lr = 3e-3;
        t.warmup_steps = 5;
        t.total_steps = 40;
        t.batch = 4;
        t.seq_len = 32;
        t.eval_every = 0;
        t.eval_sequences = 8;
        base_ = new model::Transformer(pretrain_base(tiny_config(), corpus, t, nullptr, &summary_));
    }
    static void TearDownTestSuite() {
        delete base_;
        delete text_;
    }

    static model::Transformer with_adapters(std::uint64_t seed, std::size_t keep = 2) {
        auto m = model::load_base(model::base_checkpoint(*base_));
        model::QiConfig q;
        q.keep = keep;
        auto a = model::QiAdapters::create(q, m.config());
        Rng rng(seed);
        a.init(rng);
        m.attach_qi(std::move(a));
        return m;
    }

    static TrainConfig qi_config(std::size_t steps) {
        TrainConfig t;
        t.lr = 3e-3;
        t.warmup_steps = 0;
        t.total_steps = steps;
        t.batch = 2;
        t.seq_len = 32;
        t.eval_every = 0;
        t.eval_sequences = 4;
        return t;
    }

    static inline std::string* text_ = nullptr;
    static inline model::Transformer* base_ = nullptr;
    static inline TrainSummary summary_{};
};

TEST_F(TinyTraining, PretrainingLowersLossAndFreezes) {
    EXPECT_TRUE(base_->base().frozen);
    EXPECT_LT(summary_.final_val_loss, summary_.initial_val_loss);
    EXPECT_EQ(summary_.steps, 40u);
}

TEST_F(TinyTraining, ZeroStepsLeavesAdaptersUntouched) {
    auto m = with_adapters(5);
    const std::string before = model::encode_checkpoint(model::qi_checkpoint(m));
    CorpusStream corpus(*text_, 32, 0.1, 3);
    const auto s = train_qi(m, corpus, qi_config(0), nullptr);
    EXPECT_EQ(s.steps, 0u);
    EXPECT_EQ(model::encode_checkpoint(model::qi_checkpoint(m)), before);
}

TEST_F(TinyTraining, QiTrainingKeepsBaseBytes) {
    auto m = with_adapters(6);
    const std::string base_before = model::encode_checkpoint(model::base_checkpoint(m));
    const std::string qi_before = model::encode_checkpoint(model::qi_checkpoint(m));
    CorpusStream corpus(*text_, 32, 0.1, 4);
    MemoryMetrics metrics;
    train_qi(m, corpus, qi_config(3), &metrics);
    EXPECT_EQ(model::encode_checkpoint(model::base_checkpoint(m)), base_before);
    EXPECT_NE(model::encode_checkpoint(model::qi_checkpoint(m)), qi_before);
    ASSERT_EQ(metrics.records.size(), 2u);
    EXPECT_EQ(metrics.records.back().step, 3u);
    EXPECT_DOUBLE_EQ(metrics.records.back().total_kv, 0.75);

    auto unfrozen = model::Transformer(tiny_config(), model::BaseWeights::create(tiny_config()));
    unfrozen.attach_qi(model::QiAdapters::create(model::QiConfig{}, tiny_config()));
    EXPECT_THROW(train_qi(unfrozen, corpus, qi_config(1), nullptr), ConfigError);
}

// The LM gradient reaches routed LoRA only; the auxiliary term reaches the
// reconstructor and group router only.
TEST_F(TinyTraining, ObjectivesTouchSeparateParameters) {
    CorpusStream corpus(*text_, 32, 0.1, 5);
    const TokenSeq& chunk = corpus.train().front();
    auto grads = [&](double lambda_aux, double lambda_lb) {
        auto m = with_adapters(7);
        // non-zero up-projections so the LoRA router sees an LM gradient
        Rng rng(8);
        m.qi().visit_lora([&](const std::string& name, Tensor& t) {
            if (name.find(".b") != std::string::npos && name.find("router") == std::string::npos) {
                for (double& v : t.data()) v = rng.normal(0.0, 0.05);
            }
        });
        m.qi().visit([](const std::string&, Tensor& t) { t.enable_grad(); });
        auto t = qi_config(1);
        t.lambda_aux = lambda_aux;
        t.lambda_lb = lambda_lb;
        qi_sequence_step(m, chunk, t, nullptr, 1.0, false);
        std::vector<std::pair<std::string, std::vector<double>>> out;
        m.qi().visit([&](const std::string& name, Tensor& p) {
            out.emplace_back(name, std::vector<double>(p.grad().begin(), p.grad().end()));
        });
        return out;
    };
    auto norm = [](const std::vector<double>& g) {
        double s = 0.0;
        for (double v : g) s += v * v;
        return s;
    };
    const auto lm_only = grads(0.0, 0.0);
    const auto with_aux = grads(0.5, 0.0);
    ASSERT_EQ(lm_only.size(), with_aux.size());
    for (std::size_t i = 0; i < lm_only.size(); ++i) {
        const auto& name = lm_only[i].first;
        const bool cache_side = name.find("recon.") != std::string::npos || name.find("group_router.") != std::string::npos;
        if (cache_side) {
            EXPECT_EQ(norm(lm_only[i].second), 0.0) << name;
        } else {
            EXPECT_EQ(lm_only[i].second, with_aux[i].second) << name;
        }
        if (name.find("recon.w2") != std::string::npos) {
            EXPECT_GT(norm(with_aux[i].second), 0.0) << name;
        }
    }
}

TEST_F(TinyTraining, PredictorBeatsZeroFloorAndIsDeterministic) {
    CorpusStream corpus(*text_, 32, 0.1, 6);
    PredictorConfig p;
    p.sequences = 24;
    p.epochs = 15;
    p.batch_rows = 32;
    p.query_len = 8;
    p.seed = 3;
    const auto a = train_predictor(*base_, corpus.train(), p, nullptr);
    const auto b = train_predictor(*base_, corpus.train(), p, nullptr);
    EXPECT_EQ(a.rows, 24u * 24u);
    EXPECT_LT(a.group_loss, 1.0);
    EXPECT_LT(a.token_loss, 1.0);
    const auto bytes = model::encode_checkpoint(predictor_checkpoint(a, base_->config()));
    EXPECT_EQ(model::encode_checkpoint(predictor_checkpoint(b, base_->config())), bytes);

    const auto back = load_predictor(model::decode_checkpoint(bytes), base_->config());
    EXPECT_EQ(model::encode_checkpoint(predictor_checkpoint(back, base_->config())), bytes);
    auto other = base_->config();
    other.d_ff = 48;
    EXPECT_THROW(load_predictor(model::decode_checkpoint(bytes), other), ConfigError);
}

}  // namespace
}  // namespace subtoken::train
