// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "subtoken/error.hpp"
#include "subtoken/lora/routed_lora.hpp"
#include "subtoken/numerics/ops.hpp"
#include "subtoken/numerics/rng.hpp"

namespace subtoken::lora {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.normal(0.0, scale);
    return t;
}

RoutedLoraConfig config(std::size_t s, std::size_t k) {
    RoutedLoraConfig c;
    c.subspaces = s;
    c.top_k = k;
    c.rank = 3;
    c.alpha = 6.0;
    c.dropout = 0.0;
    return c;
}

TEST(RouteScoresTest, Examples) {
    const Tensor w({4, 3});
    const std::vector<double> x{1.0, -2.0, 0.5};
    EXPECT_EQ(route_scores(x, w, Tensor({4})), std::vector<double>(4, 0.0));
    EXPECT_EQ(route_scores(x, w, Tensor::vector({1, 2, 3, 4})), (std::vector<double>{1, 2, 3, 4}));
}

TEST(RouteScoresTest, MatchesLoopOracle) {
    Rng rng(31);
    const Tensor w = random_tensor({4, 5}, rng);
    const Tensor b = random_tensor({4}, rng);
    std::vector<double> x(5);
    for (double& v : x) v = rng.normal();
    const auto s = route_scores(x, w, b);
    for (std::size_t r = 0; r < 4; ++r) {
        double acc = b[r];
        for (std::size_t i = 0; i < 5; ++i) acc += w(r, i) * x[i];
        EXPECT_NEAR(s[r], acc, 1e-12);
    }
}

TEST(SparseTopkTest, Examples) {
    EXPECT_EQ(sparse_topk_normalize(std::vector<double>{5, 1, 1, 1}, 1), (std::vector<double>{1, 0, 0, 0}));
    EXPECT_EQ(sparse_topk_normalize(std::vector<double>{2, 2, 0, 0}, 2), (std::vector<double>{0.5, 0.5, 0, 0}));
}

TEST(SparseTopkTest, SupportMatchesSortOracleAndSumsToOne) {
    Rng rng(32);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> s(6);
        for (double& v : s) v = rng.normal(0.0, 3.0);
        const auto w = sparse_topk_normalize(s, 2);
        EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
        std::vector<std::size_t> order(6);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return s[a] > s[b]; });
        for (std::size_t i = 0; i < 6; ++i) {
            const bool in = i < 2;
            ASSERT_EQ(w[order[i]] > 0.0, in);
        }
    }
}

TEST(RoutedLoraTest, ConfigValidation) {
    EXPECT_THROW(config(4, 5).validate(), ConfigError);
    EXPECT_THROW(config(4, 0).validate(), ConfigError);
    auto c = config(4, 2);
    c.dropout = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RoutedLoraTest, ZeroUpProjectionIsIdentity) {
    Rng rng(33);
    RoutedLora lora(config(4, 2), 5, 3);
    lora.init(rng);
    const Tensor w = random_tensor({3, 5}, rng);
    std::vector<double> x(5);
    for (double& v : x) v = rng.normal();
    const auto y = routed_projection(x, w, lora);
    const Tensor frozen = linear(Tensor::vector(x).reshaped({1, 5}), w);
    for (std::size_t o = 0; o < 3; ++o) EXPECT_EQ(y[o], frozen[o]);
}

TEST(RoutedLoraTest, SingleSubspaceIsPlainLora) {
    Rng rng(34);
    RoutedLora lora(config(1, 1), 5, 3);
    lora.init(rng);
    lora.b[0] = random_tensor({3, 3}, rng);
    lora.router_w = random_tensor({1, 5}, rng);
    const Tensor w = random_tensor({3, 5}, rng);
    std::vector<double> x(5);
    for (double& v : x) v = rng.normal();
    const auto y = routed_projection(x, w, lora);
    const double scale = 6.0 / 3.0;
    for (std::size_t o = 0; o < 3; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 5; ++i) acc += w(o, i) * x[i];
        for (std::size_t r = 0; r < 3; ++r) {
            double u = 0.0;
            for (std::size_t i = 0; i < 5; ++i) u += lora.a[0](r, i) * x[i];
            acc += scale * lora.b[0](o, r) * u;
        }
        EXPECT_NEAR(y[o], acc, 1e-12);
    }
}

TEST(RoutedLoraTest, MatchesMixtureOracleWithExactlyKActive) {
    Rng rng(35);
    RoutedLora lora(config(4, 2), 6, 4);
    lora.init(rng);
    for (auto& b : lora.b) b = random_tensor(b.shape(), rng);
    lora.router_w = random_tensor(lora.router_w.shape(), rng);
    const Tensor w = random_tensor({4, 6}, rng);
    const Tensor x = random_tensor({7, 6}, rng);
    RoutedLora::Cache cache;
    const Tensor y = lora.forward(x, w, false, nullptr, &cache);
    for (std::size_t t = 0; t < 7; ++t) {
        std::size_t active = 0;
        for (std::size_t s = 0; s < 4; ++s) active += cache.selected[t * 4 + s];
        EXPECT_EQ(active, 2u);
        const auto gate = sparse_topk_normalize(route_scores(x.row(t), lora.router_w, lora.router_b), 2);
        for (std::size_t o = 0; o < 4; ++o) {
            double acc = 0.0;
            for (std::size_t i = 0; i < 6; ++i) acc += w(o, i) * x(t, i);
            for (std::size_t s = 0; s < 4; ++s) {
                for (std::size_t r = 0; r < 3; ++r) {
                    double u = 0.0;
                    for (std::size_t i = 0; i < 6; ++i) u += lora.a[s](r, i) * x(t, i);
                    acc += 2.0 * gate[s] * lora.b[s](o, r) * u;
                }
            }
            EXPECT_NEAR(y(t, o), acc, 1e-12);
        }
    }
}

TEST(RoutedLoraTest, DropoutOnlyInTraining) {
    Rng rng(36);
    auto c = config(2, 1);
    c.dropout = 0.5;
    RoutedLora lora(c, 6, 4);
    lora.init(rng);
    for (auto& b : lora.b) b = random_tensor(b.shape(), rng);
    const Tensor w = random_tensor({4, 6}, rng);
    const Tensor x = random_tensor({3, 6}, rng);
    const Tensor eval1 = lora.forward(x, w, false, &rng, nullptr);
    const Tensor eval2 = lora.forward(x, w, true, nullptr, nullptr);
    EXPECT_EQ(eval1, eval2);
    Rng d1(1), d2(1);
    EXPECT_EQ(lora.forward(x, w, true, &d1, nullptr), lora.forward(x, w, true, &d2, nullptr));
    Rng d3(1);
    EXPECT_FALSE(lora.forward(x, w, true, &d3, nullptr) == eval1);
}

}  // namespace
}  // namespace subtoken::lora
