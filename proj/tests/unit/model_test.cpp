// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "subtoken/config_text.hpp"
#include "subtoken/error.hpp"
#include "subtoken/model/checkpoint.hpp"
#include "subtoken/model/transformer.hpp"
#include "subtoken/qa/sources.hpp"

namespace subtoken::model {
namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.d_model = 16;
    c.n_layers = 3;
    c.n_heads = 2;
    c.d_head = 8;
    c.d_ff = 32;
    c.max_seq = 48;
    return c;
}

Transformer make_model(std::uint64_t seed, ModelConfig c = small_config()) {
    Transformer m(c, BaseWeights::create(c));
    Rng rng(seed);
    // wider than the 0.02 default so logits vary visibly across positions
    m.base().visit([&](const std::string& name, Tensor& t) {
        if (name.find("ln") != std::string::npos || name.find(".b") != std::string::npos) return;
        for (double& v : t.data()) v = rng.normal(0.0, 0.3);
    });
    return m;
}

QiAdapters make_adapters(const ModelConfig& c, std::size_t keep, std::uint64_t seed) {
    QiConfig q;
    q.lora.dropout = 0.0;
    q.keep = keep;
    auto a = QiAdapters::create(q, c);
    Rng rng(seed);
    a.init(rng);
    return a;
}

std::vector<std::size_t> random_tokens(std::size_t n, Rng& rng) {
    std::vector<std::size_t> t(n);
    for (auto& x : t) x = rng.below(kByteVocab);
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

TEST(ModelConfigTest, ProportionalSplit) {
    EXPECT_EQ(ModelConfig::proportional_split(4), 4u);
    EXPECT_EQ(ModelConfig::proportional_split(32), 25u);
    EXPECT_EQ(ModelConfig::proportional_split(1), 1u);
    ModelConfig c;
    EXPECT_EQ(c.first_compressed_layer(), 3u);
    c.split_layer = 2;
    EXPECT_EQ(c.first_compressed_layer(), 1u);
    c.split_layer = 5;
    EXPECT_THROW(c.validate(), ConfigError);
    ModelConfig bad;
    bad.d_head = 8;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(ModelConfigTest, TextRoundTrip) {
    ModelConfig c = small_config();
    c.split_layer = 2;
    ModelConfig back;
    for (const auto& [k, v] : parse_key_values(to_config_text(c), "test")) apply_model_key(back, k, v);
    EXPECT_EQ(to_config_text(back), to_config_text(c));

    QiConfig q;
    q.lora.alpha = 3.5;
    q.targets = {Projection::kValue, Projection::kOutput};
    q.keep = 3;
    QiConfig qback;
    for (const auto& [k, v] : parse_key_values(to_config_text(q), "test")) apply_qi_key(qback, k, v);
    EXPECT_EQ(to_config_text(qback), to_config_text(q));

    EXPECT_THROW(apply_model_key(back, "model.width", "3"), ConfigError);
    EXPECT_THROW(apply_qi_key(qback, "lora.targets", "q,q"), ConfigError);
    EXPECT_FALSE(apply_qi_key(qback, "train.lr", "1"));
}

TEST(AttentionTest, SingleRowReturnsValue) {
    const Tensor q = Tensor::matrix({{0.3, -1.0}});
    const Tensor v = Tensor::matrix({{2.0, 5.0}});
    EXPECT_EQ(attention(q, q, v, true), v);
}

TEST(AttentionTest, MatchesLoopOracle) {
    Rng rng(41);
    Tensor q({3, 4}), k({3, 4}), v({3, 4});
    for (auto* t : {&q, &k, &v}) {
        for (double& x : t->data()) x = rng.normal();
    }
    for (bool causal : {true, false}) {
        const Tensor out = attention(q, k, v, causal);
        for (std::size_t i = 0; i < 3; ++i) {
            const std::size_t last = causal ? i + 1 : 3;
            std::vector<double> w(last);
            double mx = -1e300, z = 0.0;
            for (std::size_t j = 0; j < last; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < 4; ++c) s += q(i, c) * k(j, c);
                w[j] = s / 2.0;
                mx = std::max(mx, w[j]);
            }
            for (auto& x : w) z += (x = std::exp(x - mx));
            for (std::size_t c = 0; c < 4; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < last; ++j) acc += w[j] / z * v(j, c);
                EXPECT_NEAR(out(i, c), acc, 1e-12);
            }
        }
    }
    EXPECT_THROW(attention(q, k, Tensor({2, 4}), true), DimensionError);
}

TEST(TransformerTest, RejectsBadInputs) {
    const auto m = make_model(1);
    EXPECT_THROW(m.forward({}, {}), ArgumentError);
    EXPECT_THROW(m.forward(std::vector<std::size_t>(49, 1), {}), ArgumentError);
    EXPECT_THROW(m.forward(std::vector<std::size_t>{1, 999}, {}), ArgumentError);
    ForwardOptions qa;
    qa.mode = Mode::kQaCompressed;
    EXPECT_THROW(m.forward(std::vector<std::size_t>(20, 1), qa), ConfigError);
    ForwardOptions qi;
    qi.mode = Mode::kQiRouted;
    EXPECT_THROW(m.forward(std::vector<std::size_t>(20, 1), qi), ConfigError);
}

TEST(TransformerTest, DeterministicAndCausal) {
    const auto m = make_model(2);
    Rng rng(3);
    auto tokens = random_tokens(30, rng);
    const Tensor a = m.forward(tokens, {}).logits;
    EXPECT_EQ(a, m.forward(tokens, {}).logits);
    tokens[20] = (tokens[20] + 1) % kByteVocab;
    const Tensor b = m.forward(tokens, {}).logits;
    for (std::size_t t = 0; t < 30; ++t) {
        double d = 0.0;
        for (std::size_t c = 0; c < b.cols(); ++c) d = std::max(d, std::abs(a(t, c) - b(t, c)));
        if (t < 20) {
            EXPECT_EQ(d, 0.0) << "position " << t;
        } else if (t == 20) {
            EXPECT_GT(d, 0.0);
        }
    }
}

TEST(TransformerTest, AttentionMassRows) {
    auto m = make_model(4);
    const Tensor one = m.collect_attention_mass(std::vector<std::size_t>{7}, 0);
    EXPECT_EQ(one, Tensor::matrix({{1.0}}));
    Rng rng(5);
    const auto tokens = random_tokens(12, rng);
    const Tensor a = m.collect_attention_mass(tokens, 1);
    for (std::size_t r = 0; r < 12; ++r) {
        double s = 0.0;
        for (double v : a.row(r)) s += v;
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
    EXPECT_THROW(m.collect_attention_mass(tokens, 3), ArgumentError);

    // equal logits everywhere: row t spreads 1/(t+1) over its causal prefix
    m.base().layers[0].wq.fill(0.0);
    m.base().layers[0].wk.fill(0.0);
    const Tensor u = m.collect_attention_mass(tokens, 0);
    for (std::size_t r = 0; r < 12; ++r) {
        for (std::size_t c = 0; c < 12; ++c) {
            EXPECT_NEAR(u(r, c), c <= r ? 1.0 / static_cast<double>(r + 1) : 0.0, 1e-15);
        }
    }
}

TEST(TransformerTest, QaFullBudgetIsBaseline) {
    const auto m = make_model(6);
    Rng rng(7);
    const auto tokens = random_tokens(40, rng);
    const qa::OracleMaskSource full(qa::SelectorBudget{1.0, 1.0, 4});
    ForwardOptions opt;
    opt.mode = Mode::kQaCompressed;
    opt.mask_source = &full;
    opt.keep_snapshot = true;
    const auto r = m.forward(tokens, opt);
    EXPECT_LT(max_abs_diff(r.logits, m.forward(tokens, {}).logits), 1e-9);
    EXPECT_DOUBLE_EQ(r.snapshot.retention.total_kv, 1.0);
}

TEST(TransformerTest, QaSnapshotZeroesDroppedGroupsOnCompressedLayersOnly) {
    const auto m = make_model(8);
    Rng rng(9);
    const auto tokens = random_tokens(40, rng);
    const qa::OracleMaskSource half(qa::SelectorBudget{0.5, 1.0, 4});
    ForwardOptions opt;
    opt.mode = Mode::kQaCompressed;
    opt.mask_source = &half;
    opt.keep_snapshot = true;
    const auto r = m.forward(tokens, opt);
    ASSERT_TRUE(r.selection.has_value());
    const auto& mask = r.selection->mask;
    EXPECT_EQ(mask.context_kept(), 48u);  // floor(0.5 * 24 * 4)
    EXPECT_DOUBLE_EQ(r.snapshot.retention.total_kv, 0.75);
    const std::size_t split = m.config().first_compressed_layer();
    ASSERT_EQ(r.snapshot.values.size(), 3u);
    for (std::size_t l = 0; l < 3; ++l) {
        const Tensor& v = r.snapshot.values[l];
        std::size_t zeros = 0;
        for (std::size_t j = 0; j < 24; ++j) {
            for (std::size_t h = 0; h < 2; ++h) {
                for (std::size_t g = 0; g < 4; ++g) {
                    const bool dropped = v(j, h * 8 + g * 2) == 0.0 && v(j, h * 8 + g * 2 + 1) == 0.0;
                    zeros += dropped;
                    if (l >= split) {
                        EXPECT_EQ(dropped, !mask.keep(j, g));
                    }
                }
            }
        }
        if (l < split) {
            EXPECT_EQ(zeros, 0u);
        }
    }
}

TEST(TransformerTest, QiZeroLoraFullKeepIsBaseline) {
    auto m = make_model(10);
    m.attach_qi(make_adapters(m.config(), 4, 11));
    Rng rng(12);
    const auto tokens = random_tokens(33, rng);
    ForwardOptions opt;
    opt.mode = Mode::kQiRouted;
    opt.keep_snapshot = true;
    const auto r = m.forward(tokens, opt);
    EXPECT_LT(max_abs_diff(r.logits, m.forward(tokens, {}).logits), 1e-9);
    EXPECT_DOUBLE_EQ(r.snapshot.retention.total_kv, 1.0);
}

TEST(TransformerTest, QiRoutingKeepsExactlyKGroupsAndStaysCausal) {
    auto m = make_model(13);
    m.attach_qi(make_adapters(m.config(), 2, 14));
    Rng rng(15);
    auto tokens = random_tokens(25, rng);
    ForwardOptions opt;
    opt.mode = Mode::kQiRouted;
    opt.keep_cache = true;
    opt.keep_snapshot = true;
    const auto r = m.forward(tokens, opt);
    EXPECT_DOUBLE_EQ(r.snapshot.retention.rho, 0.5);
    for (const auto& lc : r.cache->layers) {
        ASSERT_TRUE(lc.routed);
        for (std::size_t t = 0; t < 25; ++t) {
            std::size_t k = 0;
            for (std::size_t g = 0; g < 4; ++g) k += lc.routing.keep[t * 4 + g];
            EXPECT_EQ(k, 2u);
        }
    }
    tokens[24] = (tokens[24] + 3) % kByteVocab;
    const auto r2 = m.forward(tokens, opt);
    for (std::size_t t = 0; t < 24; ++t) {
        for (std::size_t c = 0; c < r.logits.cols(); ++c) ASSERT_EQ(r.logits(t, c), r2.logits(t, c));
    }
}

TEST(CheckpointTest, EncodeDecodeRoundTripIsByteExact) {
    auto m = make_model(16);
    m.base().freeze();
    const auto ckpt = base_checkpoint(m);
    const std::string bytes = encode_checkpoint(ckpt);
    const auto back = decode_checkpoint(bytes);
    EXPECT_EQ(encode_checkpoint(back), bytes);
    const auto loaded = load_base(back);
    EXPECT_TRUE(loaded.base().frozen);
    EXPECT_EQ(loaded.base().checksum(), m.base().checksum());
    EXPECT_EQ(to_config_text(loaded.config()), to_config_text(m.config()));
}

TEST(CheckpointTest, MalformedImagesThrow) {
    const auto m = make_model(17);
    const std::string bytes = encode_checkpoint(base_checkpoint(m));
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FileError);
    EXPECT_THROW(decode_checkpoint(bytes + "x"), FileError);
    std::string bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad), FileError);
    EXPECT_THROW(read_checkpoint("/nonexistent/dir/base.ckpt"), FileError);
    EXPECT_THROW(base_checkpoint(m).get("missing"), FileError);
}

TEST(CheckpointTest, AdapterRoundTripAndConfigGuard) {
    auto m = make_model(18);
    m.attach_qi(make_adapters(m.config(), 2, 19));
    m.qi().layers[1].lora[0]->b[2].fill(0.125);
    const auto ckpt = qi_checkpoint(m);
    auto fresh = make_model(18);
    load_qi(ckpt, fresh);
    EXPECT_EQ(encode_checkpoint(qi_checkpoint(fresh)), encode_checkpoint(ckpt));

    ModelConfig other = small_config();
    other.d_ff = 64;
    auto mismatched = make_model(18, other);
    EXPECT_THROW(load_qi(ckpt, mismatched), ConfigError);
}

}  // namespace
}  // namespace subtoken::model
