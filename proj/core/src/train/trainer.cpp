// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/train/trainer.hpp"

#include <cmath>
#include <numeric>

#include <json.hpp>

#include "subtoken/config_text.hpp"
#include "subtoken/error.hpp"
#include "subtoken/numerics/ops.hpp"
#include "subtoken/qa/sources.hpp"
#include "subtoken/train/losses.hpp"

namespace subtoken::train {

std::string to_json_line(const MetricRecord& r) {
    nlohmann::ordered_json j;
    j["phase"] = r.phase;
    j["step"] = r.step;
    j["lm_loss"] = r.lm_loss;
    j["aux_loss"] = r.aux_loss;
    j["lb_loss"] = r.lb_loss;
    j["val_loss"] = r.val_loss;
    j["val_ppl"] = r.val_ppl;
    j["tokens_kept"] = r.tokens_kept;
    j["rho"] = r.rho;
    j["total_kv"] = r.total_kv;
    return j.dump();
}

JsonlMetrics::JsonlMetrics(const std::string& path) : out_(path, std::ios::app) {
    if (!out_) throw FileError("cannot open metrics file '" + path + "'");
}

void JsonlMetrics::write(const MetricRecord& record) {
    out_ << to_json_line(record) << '\n';
    out_.flush();
}

std::span<const std::size_t> chunk_inputs(const TokenSeq& chunk) {
    if (chunk.size() < 2) throw ArgumentError("chunk needs at least two tokens");
    return std::span<const std::size_t>(chunk).first(chunk.size() - 1);
}

std::span<const std::size_t> chunk_targets(const TokenSeq& chunk) {
    if (chunk.size() < 2) throw ArgumentError("chunk needs at least two tokens");
    return std::span<const std::size_t>(chunk).subspan(1);
}

double evaluate_lm(const model::Transformer& model, model::Mode mode, const std::vector<TokenSeq>& chunks,
                   std::size_t limit, kv::RetentionStats* stats) {
    const std::size_t n = limit == 0 ? chunks.size() : std::min(limit, chunks.size());
    if (n == 0) throw ConfigError("evaluate_lm: no validation sequences");
    model::ForwardOptions opts;
    opts.mode = mode;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto res = model.forward(chunk_inputs(chunks[i]), opts);
        total += loss_lm(res.logits, chunk_targets(chunks[i]));
        if (stats != nullptr) *stats = res.snapshot.retention;
    }
    return total / static_cast<double>(n);
}

namespace {

std::vector<Tensor*> grad_params(const std::function<void(const ParamVisitor&)>& visit) {
    std::vector<Tensor*> out;
    visit([&](const std::string&, Tensor& t) {
        t.enable_grad();
        out.push_back(&t);
    });
    return out;
}

void zero_grads(const std::vector<Tensor*>& params) {
    for (Tensor* p : params) p->zero_grad();
}

void check_loss(double value, std::size_t step, const char* term) {
    if (!std::isfinite(value)) {
        throw TrainingError("non-finite " + std::string(term) + " loss at step " + std::to_string(step));
    }
}

void scale(Tensor& t, double s) {
    for (double& v : t.data()) v *= s;
}

// dL/dscores of a linear router -> its weight and bias gradients, input held constant.
void router_param_backward(const Tensor& input, const Tensor& dscores, kv::GroupRouter& router) {
    linear_backward(input, router.w, dscores, nullptr, router.w.grad());
    bias_backward(dscores, router.b.grad());
}

std::vector<std::size_t> column_counts(std::span<const std::uint8_t> bits, std::size_t cols) {
    std::vector<std::size_t> counts(cols, 0);
    for (std::size_t i = 0; i < bits.size(); ++i) counts[i % cols] += bits[i];
    return counts;
}

struct Running {
    double lm = 0.0, aux = 0.0, lb = 0.0;
    std::size_t n = 0;
    void add(double a, double b, double c) {
        lm += a;
        aux += b;
        lb += c;
        ++n;
    }
    MetricRecord record(const char* phase, std::size_t step) const {
        MetricRecord r;
        r.phase = phase;
        r.step = step;
        const double d = n == 0 ? 1.0 : static_cast<double>(n);
        r.lm_loss = lm / d;
        r.aux_loss = aux / d;
        r.lb_loss = lb / d;
        return r;
    }
};

}  // namespace

model::Transformer pretrain_base(const model::ModelConfig& config, CorpusStream& corpus, const TrainConfig& train,
                                 MetricsSink* metrics, TrainSummary* summary) {
    train.validate();
    if (corpus.seq_len() > config.max_seq) throw ConfigError("pretrain: seq_len exceeds max_seq");
    Rng rng(train.seed);
    model::BaseWeights weights = model::BaseWeights::create(config);
    weights.init(rng);
    model::Transformer model(config, std::move(weights));
    const auto params = grad_params([&](const ParamVisitor& fn) { model.base().visit(fn); });
    AdamW opt(train);

    auto evaluate = [&](const Running& run, std::size_t step) {
        const double val = evaluate_lm(model, model::Mode::kBaseline, corpus.val(), train.eval_sequences);
        MetricRecord r = run.record("pretrain", step);
        r.val_loss = val;
        r.val_ppl = std::exp(val);
        if (metrics != nullptr) metrics->write(r);
        return val;
    };

    TrainSummary sum;
    Running run;
    sum.initial_val_loss = evaluate(run, 0);
    sum.final_val_loss = sum.initial_val_loss;
    model::ForwardOptions opts;
    opts.keep_cache = true;
    for (std::size_t step = 0; step < train.total_steps; ++step) {
        zero_grads(params);
        double lm = 0.0;
        for (const TokenSeq* chunk : corpus.next_batch(train.batch)) {
            const auto res = model.forward(chunk_inputs(*chunk), opts);
            Tensor dlogits;
            const double l = loss_lm(res.logits, chunk_targets(*chunk), &dlogits);
            check_loss(l, step, "lm");
            scale(dlogits, 1.0 / static_cast<double>(train.batch));
            model.backward(*res.cache, dlogits);
            lm += l / static_cast<double>(train.batch);
        }
        opt.step(params, lr_at(step + 1, train));
        run.add(lm, 0.0, 0.0);
        const std::size_t done = step + 1;
        if (done == train.total_steps || (train.eval_every > 0 && done % train.eval_every == 0)) {
            sum.final_val_loss = evaluate(run, done);
            run = Running{};
        }
    }
    sum.steps = train.total_steps;
    model.base().freeze();
    if (summary != nullptr) *summary = sum;
    return model;
}

QiStepLoss qi_sequence_step(model::Transformer& model, const TokenSeq& chunk, const TrainConfig& train,
                            Rng* dropout_rng, double grad_scale, bool training) {
    model::ForwardOptions opts;
    opts.mode = model::Mode::kQiRouted;
    opts.training = training;
    opts.dropout_rng = dropout_rng;
    opts.keep_cache = true;
    const auto res = model.forward(chunk_inputs(chunk), opts);
    QiStepLoss out;
    Tensor dlogits;
    out.lm = loss_lm(res.logits, chunk_targets(chunk), &dlogits);
    scale(dlogits, grad_scale);
    model.backward(*res.cache, dlogits);

    auto& qi = model.qi();
    const std::size_t heads = model.config().n_heads;
    const std::size_t layers = model.config().n_layers;

    // cache side: reconstruction + router coupling, averaged over routed layers
    std::size_t routed_layers = 0;
    for (const auto& lc : res.cache->layers) routed_layers += lc.routed && !lc.routing.bypass;
    for (std::size_t l = 0; l < layers && routed_layers > 0; ++l) {
        const auto& lc = res.cache->layers[l];
        if (!lc.routed || lc.routing.bypass) continue;
        AuxGrads g;
        const AuxLoss aux = loss_aux(lc.routing.vhat, lc.v, lc.routing.router_scores, heads, &g);
        out.aux += aux.total / static_cast<double>(routed_layers);
        const double s = grad_scale * train.lambda_aux / static_cast<double>(routed_layers);
        scale(g.dvhat, s);
        scale(g.dscores, s);
        auto& adapters = qi.layers[l];
        adapters.recon.mlp().backward(lc.routing.recon, g.dvhat, true, false);
        router_param_backward(lc.routing.router_input, g.dscores, adapters.router);
    }

    // load balance over every router: value-group routers and routed-LoRA routers
    std::size_t routers = 0;
    for (const auto& lc : res.cache->layers) {
        routers += lc.routed;
        for (const auto& slot : lc.proj) routers += slot.has_value();
    }
    for (std::size_t l = 0; l < layers && routers > 0; ++l) {
        const auto& lc = res.cache->layers[l];
        auto& adapters = qi.layers[l];
        const double s = grad_scale * train.lambda_lb / static_cast<double>(routers);
        if (lc.routed) {
            Tensor ds;
            const auto counts = column_counts(lc.routing.keep, adapters.router.groups());
            out.lb += loss_load_balance(lc.routing.router_scores, counts, &ds) / static_cast<double>(routers);
            scale(ds, s);
            router_param_backward(lc.routing.router_input, ds, adapters.router);
        }
        for (std::size_t p = 0; p < lc.proj.size(); ++p) {
            const auto& slot = lc.proj[p];
            if (!slot) continue;
            Tensor ds;
            const auto counts = column_counts(slot->selected, slot->scores.cols());
            out.lb += loss_load_balance(slot->scores, counts, &ds) / static_cast<double>(routers);
            scale(ds, s);
            adapters.lora[p]->router_backward(*slot, ds);
        }
    }
    return out;
}

TrainSummary train_qi(model::Transformer& model, CorpusStream& corpus, const TrainConfig& train,
                      MetricsSink* metrics) {
    train.validate();
    if (!model.base().frozen) throw ConfigError("train_qi: base weights must be frozen");
    if (corpus.seq_len() > model.config().max_seq) throw ConfigError("train_qi: seq_len exceeds max_seq");
    const std::uint64_t checksum = model.base().checksum();
    auto& qi = model.qi();
    const auto params = grad_params([&](const ParamVisitor& fn) { qi.visit(fn); });
    AdamW opt(train);
    Rng dropout_rng(train.seed ^ 0xD80F0A7ULL);

    auto evaluate = [&](const Running& run, std::size_t step) {
        kv::RetentionStats stats;
        const double val = evaluate_lm(model, model::Mode::kQiRouted, corpus.val(), train.eval_sequences, &stats);
        MetricRecord r = run.record("qi", step);
        r.val_loss = val;
        r.val_ppl = std::exp(val);
        r.tokens_kept = stats.tokens_kept;
        r.rho = stats.rho;
        r.total_kv = stats.total_kv;
        if (metrics != nullptr) metrics->write(r);
        return val;
    };

    TrainSummary sum;
    Running run;
    sum.initial_val_loss = evaluate(run, 0);
    sum.final_val_loss = sum.initial_val_loss;
    const double inv_batch = 1.0 / static_cast<double>(train.batch);
    for (std::size_t step = 0; step < train.total_steps; ++step) {
        zero_grads(params);
        QiStepLoss acc;
        for (const TokenSeq* chunk : corpus.next_batch(train.batch)) {
            const QiStepLoss l = qi_sequence_step(model, *chunk, train, &dropout_rng, inv_batch, true);
            check_loss(l.lm, step, "lm");
            check_loss(l.aux, step, "aux");
            check_loss(l.lb, step, "load-balance");
            acc.lm += l.lm * inv_batch;
            acc.aux += l.aux * inv_batch;
            acc.lb += l.lb * inv_batch;
        }
        opt.step(params, lr_at(step + 1, train));
        run.add(acc.lm, acc.aux, acc.lb);
        const std::size_t done = step + 1;
        if (done == train.total_steps || (train.eval_every > 0 && done % train.eval_every == 0)) {
            sum.final_val_loss = evaluate(run, done);
            run = Running{};
        }
    }
    sum.steps = train.total_steps;
    for (Tensor* p : params) p->drop_grad();
    if (model.base().checksum() != checksum) throw TrainingError("train_qi: frozen base weights changed");
    return sum;
}

PredictorBundle train_predictor(const model::Transformer& model, const std::vector<TokenSeq>& sequences,
                                const PredictorConfig& config, MetricsSink* metrics) {
    const std::size_t d = model.config().d_model;
    const std::size_t groups = config.groups;
    if (groups == 0 || model.config().d_head % groups != 0) {
        throw ConfigError("train_predictor: groups do not divide d_head");
    }
    if (config.batch_rows == 0) throw ConfigError("train_predictor: batch_rows must be positive");

    std::vector<double> hidden, scores, alpha;
    const std::size_t n_seq = std::min(config.sequences, sequences.size());
    for (std::size_t i = 0; i < n_seq; ++i) {
        const auto tokens = chunk_inputs(sequences[i]);
        if (tokens.size() <= config.query_len) continue;
        const auto t = qa::oracle_targets(model, tokens, config.query_len, groups);
        hidden.insert(hidden.end(), t.hidden.data().begin(), t.hidden.data().end());
        scores.insert(scores.end(), t.scores.data().begin(), t.scores.data().end());
        alpha.insert(alpha.end(), t.alpha.begin(), t.alpha.end());
    }
    const std::size_t rows = alpha.size();
    if (rows == 0) throw ConfigError("train_predictor: no context tokens to collect targets from");

    const Tensor h({rows, d}, std::move(hidden));
    const Tensor s_raw({rows, groups}, std::move(scores));
    const Tensor a_raw({rows, 1}, std::move(alpha));

    PredictorBundle out;
    out.rows = rows;
    out.groups = qa::RelevancePredictor(d, groups);
    out.tokens = qa::RelevancePredictor(d, 1);
    Rng rng(config.seed);
    out.groups.init(rng);
    out.tokens.init(rng);
    out.groups.fit_normalization(s_raw);
    out.tokens.fit_normalization(a_raw);
    const Tensor s_target = out.groups.normalize(s_raw);
    const Tensor a_target = out.tokens.normalize(a_raw);

    const auto params = grad_params([&](const ParamVisitor& fn) {
        out.groups.mlp.visit("groups.", fn);
        out.tokens.mlp.visit("tokens.", fn);
    });
    TrainConfig sched;
    sched.lr = config.lr;
    sched.weight_decay = config.weight_decay;
    const std::size_t per_epoch = (rows + config.batch_rows - 1) / config.batch_rows;
    sched.total_steps = per_epoch * config.epochs;
    sched.warmup_steps = std::min<std::size_t>(sched.total_steps, per_epoch);
    AdamW opt(sched);

    auto gather = [](const Tensor& src, std::span<const std::size_t> idx) {
        Tensor dst({idx.size(), src.cols()});
        for (std::size_t r = 0; r < idx.size(); ++r) {
            std::copy_n(src.row(idx[r]).data(), src.cols(), dst.row(r).data());
        }
        return dst;
    };
    auto full_loss = [&](const qa::RelevancePredictor& p, const Tensor& target) {
        return loss_predictor(p.predict_normalized(h), target);
    };

    std::vector<std::size_t> order(rows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < per_epoch; ++b) {
            const auto idx = std::span<const std::size_t>(order).subspan(
                b * config.batch_rows, std::min(config.batch_rows, rows - b * config.batch_rows));
            zero_grads(params);
            const Tensor hb = gather(h, idx);
            for (auto* pred : {&out.groups, &out.tokens}) {
                const Tensor& target = pred == &out.groups ? s_target : a_target;
                TwoLayerMlp::Cache cache;
                const Tensor y = pred->predict_normalized(hb, &cache);
                Tensor dy;
                const double l = loss_predictor(y, gather(target, idx), &dy);
                check_loss(l, step, "predictor");
                if (pred == &out.groups) epoch_loss += l / static_cast<double>(per_epoch);
                pred->mlp.backward(cache, dy, true, false);
            }
            opt.step(params, lr_at(++step, sched));
        }
        if (metrics != nullptr) {
            MetricRecord r;
            r.phase = "predictor";
            r.step = step;
            r.lm_loss = epoch_loss;
            metrics->write(r);
        }
    }
    for (Tensor* p : params) p->drop_grad();
    out.group_loss = full_loss(out.groups, s_target);
    out.token_loss = full_loss(out.tokens, a_target);
    return out;
}

model::Checkpoint predictor_checkpoint(const PredictorBundle& bundle, const model::ModelConfig& config) {
    model::Checkpoint ckpt;
    ckpt.config = model::to_config_text(config) + "predictor.groups=" + std::to_string(bundle.groups.outputs()) + "\n";
    model::collect_arrays(ckpt, [&](const ConstParamVisitor& fn) {
        bundle.groups.cvisit("group_predictor.", fn);
        bundle.tokens.cvisit("token_predictor.", fn);
    });
    return ckpt;
}

PredictorBundle load_predictor(const model::Checkpoint& ckpt, const model::ModelConfig& config) {
    model::ModelConfig stored;
    std::size_t groups = 0;
    for (const auto& [k, v] : parse_key_values(ckpt.config, "predictor checkpoint")) {
        if (k == "predictor.groups") groups = parse_count(k, v);
        else if (!model::apply_model_key(stored, k, v)) throw FileError("predictor checkpoint has unexpected key '" + k + "'");
    }
    if (model::to_config_text(stored) != model::to_config_text(config)) {
        throw ConfigError("predictor checkpoint was trained for a different model configuration");
    }
    if (groups == 0) throw FileError("predictor checkpoint does not record its group count");
    PredictorBundle b;
    b.groups = qa::RelevancePredictor(config.d_model, groups);
    b.tokens = qa::RelevancePredictor(config.d_model, 1);
    model::restore_arrays(ckpt, [&](const ParamVisitor& fn) {
        b.groups.visit("group_predictor.", fn);
        b.tokens.visit("token_predictor.", fn);
    });
    return b;
}

}  // namespace subtoken::train
