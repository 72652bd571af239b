// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/harness/grad_suite.hpp"

#include <algorithm>
#include <functional>

#include "subtoken/error.hpp"
#include "subtoken/kv/value_groups.hpp"
#include "subtoken/lora/routed_lora.hpp"
#include "subtoken/model/transformer.hpp"
#include "subtoken/numerics/grad_check.hpp"
#include "subtoken/numerics/ops.hpp"
#include "subtoken/qa/predictor.hpp"
#include "subtoken/train/losses.hpp"
#include "subtoken/train/trainer.hpp"

namespace subtoken::harness {

namespace {

constexpr std::size_t kMaxAttempts = 200;

using Params = std::vector<Tensor*>;

Params gather(const std::function<void(const ParamVisitor&)>& visit) {
    Params out;
    visit([&](const std::string&, Tensor& t) {
        t.enable_grad();
        out.push_back(&t);
    });
    return out;
}

std::vector<double> flatten(const Params& ps) {
    std::vector<double> v;
    for (const Tensor* p : ps) v.insert(v.end(), p->data().begin(), p->data().end());
    return v;
}

// Wraps "set params, zero grads, run loss (+ backward)" as a DifferentiableFn.
DifferentiableFn wrap(const Params& ps, std::function<double(bool with_grad)> loss) {
    return [ps, loss](std::span<const double> theta, std::vector<double>* grad) {
        std::size_t off = 0;
        for (Tensor* p : ps) {
            std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(off), p->size(), p->data().begin());
            p->zero_grad();
            off += p->size();
        }
        const double value = loss(grad != nullptr);
        if (grad != nullptr) {
            grad->clear();
            for (const Tensor* p : ps) grad->insert(grad->end(), p->grad().begin(), p->grad().end());
        }
        return value;
    };
}

void randomize(Tensor& t, Rng& rng, double stddev) {
    for (double& v : t.data()) v = rng.normal(0.0, stddev);
}

Tensor random_tensor(Shape shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    randomize(t, rng, stddev);
    return t;
}

// Gap between the K-th and (K+1)-th largest entry of each row.
bool clears_margin(const Tensor& scores, std::size_t k) {
    if (k >= scores.cols()) return true;
    for (std::size_t r = 0; r < scores.rows(); ++r) {
        std::vector<double> row(scores.row(r).begin(), scores.row(r).end());
        std::sort(row.begin(), row.end(), std::greater<>());
        if (row[k - 1] - row[k] < kTieMargin) return false;
    }
    return true;
}

GradCheckEntry finish(std::string name, const Params& ps, const std::function<double(bool)>& loss,
                      std::size_t attempts) {
    const auto r = grad_check(wrap(ps, loss), flatten(ps));
    return GradCheckEntry{std::move(name), r.max_rel_error, r.coordinates, attempts};
}

GradCheckEntry check_routed_lora(Rng& rng) {
    lora::RoutedLoraConfig cfg{4, 2, 2, 4.0, 0.0};
    const std::size_t d_in = 6, d_out = 5, tokens = 3;
    for (std::size_t attempt = 1; attempt <= kMaxAttempts; ++attempt) {
        lora::RoutedLora lr(cfg, d_in, d_out);
        lr.init(rng);
        for (auto& a : lr.a) randomize(a, rng, 0.3);
        for (auto& b : lr.b) randomize(b, rng, 0.3);
        randomize(lr.router_w, rng, 0.5);
        randomize(lr.router_b, rng, 0.5);
        const Tensor x = random_tensor({tokens, d_in}, rng, 1.0);
        const Tensor w = random_tensor({d_out, d_in}, rng, 0.5);
        const std::vector<std::size_t> targets{1, 4, 0};
        lora::RoutedLora::Cache probe;
        lr.forward(x, w, false, nullptr, &probe);
        if (!clears_margin(probe.scores, cfg.top_k)) continue;
        const Params ps = gather([&](const ParamVisitor& fn) { lr.visit("lora.", fn); });
        return finish("routed_lora", ps,
                      [&](bool with_grad) {
                          lora::RoutedLora::Cache c;
                          const Tensor y = lr.forward(x, w, false, nullptr, &c);
                          Tensor dy;
                          const double l = train::loss_lm(y, targets, with_grad ? &dy : nullptr);
                          if (with_grad) lr.backward(c, w, dy, {});
                          return l;
                      },
                      attempt);
    }
    throw NumericError("routed_lora grad check: no draw cleared the tie margin");
}

struct AuxFixture {
    kv::GroupRouter router;
    kv::Reconstructor recon;
    Tensor x, v;
    std::size_t heads = 2, keep = 2;
};

AuxFixture make_aux_fixture(Rng& rng) {
    const std::size_t tokens = 4, d_model = 6, d_head = 8, groups = 4;
    AuxFixture f;
    f.router = kv::GroupRouter(groups, d_model);
    randomize(f.router.w, rng, 0.6);
    randomize(f.router.b, rng, 0.3);
    f.recon = kv::Reconstructor(d_head, groups, 2 * d_head);
    f.recon.init(rng, 0.4);
    randomize(f.recon.mlp().b1, rng, 0.1);
    randomize(f.recon.mlp().b2, rng, 0.1);
    f.x = random_tensor({tokens, d_model}, rng, 1.0);
    f.v = random_tensor({tokens, f.heads * d_head}, rng, 1.0);
    return f;
}

double aux_loss(AuxFixture& f, bool with_grad, bool recon_grad, bool router_grad) {
    kv::ValueRoutingCache c;
    kv::route_values(f.x, f.v, f.heads, f.keep, f.router, f.recon, &c);
    train::AuxGrads g;
    const double l = train::loss_aux(c.vhat, f.v, c.router_scores, f.heads, with_grad ? &g : nullptr).total;
    if (with_grad && recon_grad) f.recon.mlp().backward(c.recon, g.dvhat, true, false);
    if (with_grad && router_grad) {
        linear_backward(f.x, f.router.w, g.dscores, nullptr, f.router.w.grad());
        bias_backward(g.dscores, f.router.b.grad());
    }
    return l;
}

GradCheckEntry check_reconstructor(Rng& rng) {
    AuxFixture f = make_aux_fixture(rng);
    const Params ps = gather([&](const ParamVisitor& fn) { f.recon.mlp().visit("recon.", fn); });
    return finish("reconstructor", ps, [&](bool g) { return aux_loss(f, g, true, false); }, 1);
}

GradCheckEntry check_group_router(Rng& rng, bool load_balance) {
    for (std::size_t attempt = 1; attempt <= kMaxAttempts; ++attempt) {
        AuxFixture f = make_aux_fixture(rng);
        if (!clears_margin(f.router.scores(f.x), f.keep)) continue;
        const Params ps = gather([&](const ParamVisitor& fn) { f.router.visit("router.", fn); });
        if (!load_balance) {
            return finish("group_router", ps, [&](bool g) { return aux_loss(f, g, false, true); }, attempt);
        }
        return finish("load_balance", ps,
                      [&](bool with_grad) {
                          const Tensor s = f.router.scores(f.x);
                          std::vector<std::size_t> counts(s.cols(), 0);
                          for (std::size_t t = 0; t < s.rows(); ++t) {
                              for (auto g : topk_indices(s.row(t), f.keep)) ++counts[g];
                          }
                          Tensor ds;
                          const double l = train::loss_load_balance(s, counts, with_grad ? &ds : nullptr);
                          if (with_grad) {
                              linear_backward(f.x, f.router.w, ds, nullptr, f.router.w.grad());
                              bias_backward(ds, f.router.b.grad());
                          }
                          return l;
                      },
                      attempt);
    }
    throw NumericError("group router grad check: no draw cleared the tie margin");
}

GradCheckEntry check_predictor(Rng& rng, std::size_t outputs, const char* name) {
    const std::size_t d_model = 8, rows = 5;
    qa::RelevancePredictor p(d_model, outputs);
    p.init(rng, 0.2);
    randomize(p.mlp.b1, rng, 0.1);
    const Tensor h = random_tensor({rows, d_model}, rng, 1.0);
    const Tensor target = random_tensor({rows, outputs}, rng, 1.0);
    const Params ps = gather([&](const ParamVisitor& fn) { p.mlp.visit("pred.", fn); });
    return finish(name, ps,
                  [&](bool with_grad) {
                      TwoLayerMlp::Cache c;
                      const Tensor y = p.predict_normalized(h, &c);
                      Tensor dy;
                      const double l = train::loss_predictor(y, target, with_grad ? &dy : nullptr);
                      if (with_grad) p.mlp.backward(c, dy, true, false);
                      return l;
                  },
                  1);
}

model::ModelConfig tiny_model() {
    model::ModelConfig c;
    c.vocab_size = 11;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_head = 8;
    c.d_ff = 24;
    c.max_seq = 8;
    return c;
}

model::Transformer tiny_transformer(Rng& rng) {
    const auto c = tiny_model();
    auto w = model::BaseWeights::create(c);
    w.init(rng);
    // larger weights than the training init so every path carries signal
    w.visit([&](const std::string& name, Tensor& t) {
        if (name.find("_g") == std::string::npos) randomize(t, rng, 0.3);
    });
    return model::Transformer(c, std::move(w));
}

const std::vector<std::size_t> kTinyTokens{3, 7, 1, 9, 4, 4};
const std::vector<std::size_t> kTinyTargets{7, 1, 9, 4, 4, 2};

GradCheckEntry check_base_model(Rng& rng) {
    model::Transformer m = tiny_transformer(rng);
    const Params ps = gather([&](const ParamVisitor& fn) { m.base().visit(fn); });
    return finish("base_model", ps,
                  [&](bool with_grad) {
                      model::ForwardOptions o;
                      o.keep_cache = with_grad;
                      const auto res = m.forward(kTinyTokens, o);
                      Tensor d;
                      const double l = train::loss_lm(res.logits, kTinyTargets, with_grad ? &d : nullptr);
                      if (with_grad) m.backward(*res.cache, d);
                      return l;
                  },
                  1);
}

GradCheckEntry check_qi_model(Rng& rng) {
    for (std::size_t attempt = 1; attempt <= kMaxAttempts; ++attempt) {
        model::Transformer m = tiny_transformer(rng);
        m.base().freeze();
        model::QiConfig qc;
        qc.lora = lora::RoutedLoraConfig{4, 2, 2, 4.0, 0.0};
        auto ad = model::QiAdapters::create(qc, m.config());
        ad.init(rng);
        ad.visit([&](const std::string&, Tensor& t) { randomize(t, rng, 0.3); });
        m.attach_qi(std::move(ad));

        model::ForwardOptions o;
        o.mode = model::Mode::kQiRouted;
        o.keep_cache = true;
        const auto probe = m.forward(kTinyTokens, o);
        bool ok = true;
        for (const auto& lc : probe.cache->layers) {
            ok = ok && clears_margin(lc.routing.router_scores, qc.keep);
            for (const auto& slot : lc.proj) ok = ok && (!slot || clears_margin(slot->scores, qc.lora.top_k));
        }
        if (!ok) continue;
        const Params ps = gather([&](const ParamVisitor& fn) { m.qi().visit_lora(fn); });
        return finish("qi_model", ps,
                      [&](bool with_grad) {
                          model::ForwardOptions fo = o;
                          fo.keep_cache = with_grad;
                          const auto res = m.forward(kTinyTokens, fo);
                          Tensor d;
                          const double l = train::loss_lm(res.logits, kTinyTargets, with_grad ? &d : nullptr);
                          if (with_grad) m.backward(*res.cache, d);
                          return l;
                      },
                      attempt);
    }
    throw NumericError("qi_model grad check: no draw cleared the tie margin");
}

}  // namespace

std::vector<GradCheckEntry> run_grad_suite(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<GradCheckEntry> out;
    out.push_back(check_routed_lora(rng));
    out.push_back(check_reconstructor(rng));
    out.push_back(check_group_router(rng, false));
    out.push_back(check_group_router(rng, true));
    out.push_back(check_predictor(rng, 4, "group_predictor"));
    out.push_back(check_predictor(rng, 1, "token_predictor"));
    out.push_back(check_base_model(rng));
    out.push_back(check_qi_model(rng));
    return out;
}

}  // namespace subtoken::harness
