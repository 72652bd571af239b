// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "subtoken/error.hpp"
#include "subtoken/kv/budget.hpp"
#include "subtoken/kv/value_groups.hpp"
#include "subtoken/numerics/rng.hpp"
#include "subtoken/train/optimizer.hpp"

namespace subtoken::kv {
namespace {

BudgetSpec spec_of(double token_keep, double rho) {
    BudgetSpec s;
    s.token_keep = token_keep;
    s.rho = rho;
    return s;
}

TEST(BudgetTest, RetentionMatchesReferenceTotals) {
    EXPECT_DOUBLE_EQ(kv_retention_fraction(spec_of(1.0, 0.25)), 0.625);
    EXPECT_DOUBLE_EQ(kv_retention_fraction(spec_of(1.0, 0.5)), 0.75);
    EXPECT_DOUBLE_EQ(kv_retention_fraction(spec_of(0.75, 0.75)), 0.65625);
    EXPECT_DOUBLE_EQ(kv_retention_fraction(spec_of(0.75, 0.5)), 0.5625);
    EXPECT_DOUBLE_EQ(kv_retention_fraction(spec_of(0.5, 0.5)), 0.375);
    EXPECT_DOUBLE_EQ(kv_retention_fraction(spec_of(1.0, 1.0)), 1.0);
}

TEST(BudgetTest, RejectsOutOfRangeFractions) {
    EXPECT_THROW(spec_of(1.0, 0.0).validate(), ArgumentError);
    EXPECT_THROW(spec_of(1.0, 1.5).validate(), ArgumentError);
    EXPECT_THROW(spec_of(-0.1, 0.5).validate(), ArgumentError);
    BudgetSpec s = spec_of(1.0, 0.5);
    s.groups = 0;
    EXPECT_THROW(s.validate(), ArgumentError);
}

TEST(BudgetTest, PairBudgetFloors) {
    BudgetSpec s = spec_of(1.0, 0.25);
    s.context = 100;
    EXPECT_EQ(s.pair_budget(), 100u);
    s.context = 7;
    s.rho = 0.3;
    EXPECT_EQ(s.pair_budget(), 8u);  // floor(8.4)
    // 0.7 * 10 * 4 is 27.999999999999996 in binary; the count must still be 28
    s.context = 10;
    s.rho = 0.7;
    EXPECT_EQ(s.pair_budget(), 28u);
    s.token_keep = 0.75;
    EXPECT_EQ(s.tokens_kept(), 7u);
    EXPECT_EQ(floor_count(2.9999999999), 3u);
    EXPECT_EQ(floor_count(2.5), 2u);
}

TEST(SelectionMaskTest, CountsAndRendering) {
    SelectionMask m(3, 4, 2);
    m.set(0, 1, true);
    m.set(0, 3, true);
    m.set(1, 0, true);
    EXPECT_EQ(m.kept_counts(), (std::vector<std::size_t>{2, 1, 4}));
    EXPECT_EQ(m.context_kept(), 3u);
    EXPECT_EQ(m.row_string(0), "0101");
    const auto ones = SelectionMask::all_ones(3, 4, 2);
    EXPECT_EQ(ones.context_kept(), 8u);
    EXPECT_TRUE(ones.keep(2, 3));
}

TEST(PartitionTest, Examples) {
    const std::vector<double> v{1, 2, 3, 4};
    const auto singles = partition_value(v, 4);
    ASSERT_EQ(singles.size(), 4u);
    for (std::size_t g = 0; g < 4; ++g) {
        ASSERT_EQ(singles[g].size(), 1u);
        EXPECT_EQ(singles[g][0], v[g]);
    }
    const auto whole = partition_value(v, 1);
    ASSERT_EQ(whole.size(), 1u);
    EXPECT_EQ(whole[0].size(), 4u);
    std::vector<double> joined;
    for (auto s : partition_value(v, 2)) joined.insert(joined.end(), s.begin(), s.end());
    EXPECT_EQ(joined, v);
    EXPECT_THROW(partition_value(v, 3), ConfigError);
}

TEST(SelectKeepGroupsTest, Examples) {
    GroupRouter router(4, 3);
    const std::vector<double> x{0.5, -1.0, 2.0};
    EXPECT_EQ(select_keep_groups(x, router, 4).size(), 4u);
    router.b = Tensor::vector({0, 0, 9, 9});
    EXPECT_EQ(select_keep_groups(x, router, 2), (std::vector<std::size_t>{2, 3}));
    EXPECT_THROW(select_keep_groups(x, router, 0), ArgumentError);
    EXPECT_THROW(select_keep_groups(x, router, 5), ArgumentError);
}

TEST(SelectKeepGroupsTest, MatchesSortOracle) {
    Rng rng(21);
    GroupRouter router(4, 6);
    for (double& w : router.w.data()) w = rng.normal();
    for (double& b : router.b.data()) b = rng.normal();
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> x(6);
        for (double& v : x) v = rng.normal();
        const std::size_t k = 1 + rng.below(4);
        std::vector<std::pair<double, std::size_t>> scored;
        for (std::size_t g = 0; g < 4; ++g) {
            double s = router.b[g];
            for (std::size_t i = 0; i < 6; ++i) s += router.w(g, i) * x[i];
            scored.emplace_back(-s, g);
        }
        std::sort(scored.begin(), scored.end());
        std::vector<std::size_t> want;
        for (std::size_t i = 0; i < k; ++i) want.push_back(scored[i].second);
        std::sort(want.begin(), want.end());
        auto got = select_keep_groups(x, router, k);
        std::sort(got.begin(), got.end());
        ASSERT_EQ(got, want);
    }
}

TEST(ReconstructTest, FullKeepBypassesAndZeroWeightsGiveZeros) {
    Reconstructor recon(8, 4, 16);
    Rng rng(22);
    recon.init(rng, 0.5);
    const std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8};
    const std::vector<std::size_t> all{0, 1, 2, 3};
    EXPECT_EQ(reconstruct_value(v, all, recon), v);

    Reconstructor zero(8, 4, 16);
    const std::vector<std::size_t> keep{0, 2};
    const auto out = reconstruct_value(v, keep, zero);
    EXPECT_EQ(out, (std::vector<double>{1, 2, 0, 0, 5, 6, 0, 0}));
}

TEST(ReconstructTest, RouteValuesKeepsSelectedGroupsExactly) {
    const std::size_t tokens = 5, heads = 2, d_head = 8, groups = 4;
    Rng rng(23);
    GroupRouter router(groups, 6);
    for (double& w : router.w.data()) w = rng.normal();
    Reconstructor recon(d_head, groups, 16);
    recon.init(rng, 0.3);
    Tensor x({tokens, 6});
    Tensor v({tokens, heads * d_head});
    for (double& e : x.data()) e = rng.normal();
    for (double& e : v.data()) e = rng.normal();

    EXPECT_EQ(route_values(x, v, heads, groups, router, recon, nullptr), v);

    ValueRoutingCache cache;
    const Tensor out = route_values(x, v, heads, 2, router, recon, &cache);
    for (std::size_t t = 0; t < tokens; ++t) {
        std::size_t kept = 0;
        for (std::size_t g = 0; g < groups; ++g) {
            if (!cache.keep[t * groups + g]) continue;
            ++kept;
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = g * 2; i < g * 2 + 2; ++i) {
                    EXPECT_EQ(out(t, h * d_head + i), v(t, h * d_head + i));
                }
            }
        }
        EXPECT_EQ(kept, 2u);
    }
}

// v^(1) is a fixed linear function of v^(0); a trained reconstructor must
// recover it from group 0 alone. Least squares attains zero error here.
TEST(ReconstructTest, LearnsLinearDependency) {
    const std::size_t d_head = 4, groups = 2, batch = 64;
    const double a[2][2] = {{0.8, -0.5}, {0.3, 1.1}};
    Reconstructor recon(d_head, groups, 32);
    Rng rng(24);
    recon.init(rng, 0.1);
    std::vector<Tensor*> params;
    recon.mlp().visit("", [&](const std::string&, Tensor& t) {
        t.enable_grad();
        params.push_back(&t);
    });
    train::AdamW opt(0.9, 0.999, 1e-8, 0.0);
    const std::vector<std::uint8_t> bits_row{1, 0};

    auto sample = [&](Tensor& v) {
        for (std::size_t r = 0; r < v.rows(); ++r) {
            const double x0 = rng.normal(), x1 = rng.normal();
            v(r, 0) = x0;
            v(r, 1) = x1;
            v(r, 2) = a[0][0] * x0 + a[0][1] * x1;
            v(r, 3) = a[1][0] * x0 + a[1][1] * x1;
        }
    };
    auto bits_for = [&](std::size_t n) {
        std::vector<std::uint8_t> b;
        for (std::size_t i = 0; i < n; ++i) b.insert(b.end(), bits_row.begin(), bits_row.end());
        return b;
    };

    for (int step = 0; step < 3000; ++step) {
        Tensor v({batch, d_head});
        sample(v);
        TwoLayerMlp::Cache cache;
        const Tensor vhat = recon.predict(recon.make_input(v, bits_for(batch)), &cache);
        Tensor dy({batch, d_head});
        for (std::size_t r = 0; r < batch; ++r) {
            for (std::size_t i = 2; i < 4; ++i) dy(r, i) = 2.0 * (vhat(r, i) - v(r, i)) / (2.0 * batch);
        }
        for (auto* p : params) p->zero_grad();
        recon.mlp().backward(cache, dy, true, false);
        opt.step(params, 3e-3);
    }

    const std::size_t n = 2000;
    Tensor v({n, d_head});
    sample(v);
    const Tensor vhat = recon.predict(recon.make_input(v, bits_for(n)));
    double mse = 0.0, mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 2; i < 4; ++i) {
            mse += std::pow(vhat(r, i) - v(r, i), 2);
            mean += v(r, i);
        }
    }
    mean /= 2.0 * n;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 2; i < 4; ++i) var += std::pow(v(r, i) - mean, 2);
    }
    EXPECT_LT(mse / var, 0.1);
}

}  // namespace
}  // namespace subtoken::kv
