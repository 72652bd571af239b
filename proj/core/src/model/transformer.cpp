// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/model/transformer.hpp"

#include <cmath>
#include <limits>

#include "numerics/eigen_view.hpp"
#include "subtoken/error.hpp"

namespace subtoken::model {

using detail::block;
using detail::view;

namespace {

/// Attention for one head. Rows below `query_begin` read `v_context_rows`,
/// rows at or above it read `v_query_rows`; a query row never sees a context
/// key whose `alive` entry is zero.
template <typename QView, typename KView, typename VCtx, typename VQry>
void attend(const QView& q, const KView& k, const VCtx& v_context_rows, const VQry& v_query_rows,
            std::size_t query_begin, const std::vector<std::uint8_t>* alive, bool causal, Tensor& probs,
            detail::StridedView out) {
    const auto tokens = static_cast<Eigen::Index>(q.rows());
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    probs = Tensor({static_cast<std::size_t>(tokens), static_cast<std::size_t>(tokens)});
    auto p = view(probs);
    p.noalias() = scale * (q * k.transpose());
    for (Eigen::Index i = 0; i < tokens; ++i) {
        const Eigen::Index end = causal ? i + 1 : tokens;
        const bool query_row = static_cast<std::size_t>(i) >= query_begin;
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < end; ++j) {
            const bool blocked = query_row && alive != nullptr && static_cast<std::size_t>(j) < query_begin &&
                                 (*alive)[static_cast<std::size_t>(j)] == 0;
            if (!blocked) mx = std::max(mx, p(i, j));
        }
        double sum = 0.0;
        for (Eigen::Index j = 0; j < tokens; ++j) {
            const bool blocked = j >= end || (query_row && alive != nullptr &&
                                              static_cast<std::size_t>(j) < query_begin &&
                                              (*alive)[static_cast<std::size_t>(j)] == 0);
            if (blocked) {
                p(i, j) = 0.0;
            } else {
                p(i, j) = std::exp(p(i, j) - mx);
                sum += p(i, j);
            }
        }
        p.row(i) /= sum;
    }
    const auto qb = static_cast<Eigen::Index>(std::min<std::size_t>(query_begin, static_cast<std::size_t>(tokens)));
    if (qb > 0) out.topRows(qb).noalias() = p.topRows(qb) * v_context_rows;
    if (qb < tokens) out.bottomRows(tokens - qb).noalias() = p.bottomRows(tokens - qb) * v_query_rows;
}

kv::RetentionStats qa_retention(const QaSelection& sel) {
    kv::RetentionStats r;
    const std::size_t context = sel.mask.context_rows();
    if (context == 0) return r;
    std::size_t alive = 0;
    for (std::size_t j = 0; j < context; ++j) alive += sel.token_alive[j];
    const double kept = static_cast<double>(sel.mask.context_kept());
    const double groups = static_cast<double>(sel.mask.groups());
    r.tokens_kept = static_cast<double>(alive) / static_cast<double>(context);
    r.rho = alive == 0 ? 0.0 : kept / (static_cast<double>(alive) * groups);
    r.total_kv = (static_cast<double>(alive) + kept / groups) / (2.0 * static_cast<double>(context));
    return r;
}

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v_routed, bool causal) {
    if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v_routed.shape()) {
        throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                             shape_str(v_routed.shape()) + " must be equal [T x d_head] matrices");
    }
    Tensor out(q.shape());
    Tensor probs;
    const auto width = q.cols();
    attend(block(q, 0, width), block(k, 0, width), block(v_routed, 0, width), block(v_routed, 0, width), q.rows(),
           nullptr, causal, probs, block(out, 0, width));
    return out;
}

QaSelection QaSelection::full(std::size_t rows, std::size_t groups, std::size_t context) {
    return QaSelection{std::vector<std::uint8_t>(rows, 1), kv::SelectionMask::all_ones(rows, groups, context)};
}

QaSelection FixedMaskSource::select(const SplitContext& ctx) const {
    if (selection_.mask.rows() != ctx.hidden.rows() || selection_.mask.context_rows() != ctx.context) {
        throw DimensionError("FixedMaskSource: mask does not match the sequence partition");
    }
    return selection_;
}

Transformer::Transformer(ModelConfig config, BaseWeights base) : config_(std::move(config)), base_(std::move(base)) {
    config_.validate();
    if (base_.layers.size() != config_.n_layers || base_.tok_emb.shape() != Shape{config_.vocab_size, config_.d_model} ||
        base_.pos_emb.shape() != Shape{config_.max_seq, config_.d_model}) {
        throw DimensionError("Transformer: base weights do not match the model configuration");
    }
}

QiAdapters& Transformer::qi() {
    if (!qi_) throw ConfigError("model has no query-independent adapters");
    return *qi_;
}

const QiAdapters& Transformer::qi() const {
    if (!qi_) throw ConfigError("model has no query-independent adapters");
    return *qi_;
}

void Transformer::attach_qi(QiAdapters adapters) {
    adapters.config.validate(config_);
    if (adapters.layers.size() != config_.n_layers) throw DimensionError("adapters do not match layer count");
    qi_ = std::move(adapters);
}

ForwardResult Transformer::forward(std::span<const std::size_t> tokens, const ForwardOptions& options) const {
    const std::size_t seq = tokens.size();
    const std::size_t d = config_.d_model;
    const std::size_t heads = config_.n_heads;
    const std::size_t dh = config_.d_head;
    if (seq == 0) throw ArgumentError("forward: empty sequence");
    if (seq > config_.max_seq) {
        throw ArgumentError("forward: sequence length " + std::to_string(seq) + " exceeds max_seq " +
                            std::to_string(config_.max_seq));
    }
    for (auto t : tokens) {
        if (t >= config_.vocab_size) throw ArgumentError("forward: token id " + std::to_string(t) + " out of range");
    }
    const bool qi_mode = options.mode == Mode::kQiRouted;
    const bool qa_mode = options.mode == Mode::kQaCompressed;
    if (qi_mode && !qi_) throw ConfigError("forward: qi_routed mode requires attached adapters");
    if (qa_mode && options.mask_source == nullptr) throw ConfigError("forward: qa_compressed mode requires a mask source");
    if (qa_mode && options.keep_cache) throw ConfigError("forward: qa_compressed mode has no backward pass");

    const std::size_t first_compressed = config_.first_compressed_layer();
    std::optional<std::size_t> probe = options.probe_layer;
    if (probe && *probe >= config_.n_layers) throw ArgumentError("forward: probe layer out of range");
    if (qa_mode && options.mask_source->needs_probe()) {
        if (!probe) probe = first_compressed == 0 ? 0 : first_compressed - 1;
        if (*probe >= first_compressed) {
            throw ConfigError("forward: probe layer must precede the first compressed layer");
        }
    }
    const std::size_t context = seq > options.query_len ? seq - options.query_len : 0;

    ForwardResult result;
    std::shared_ptr<ForwardCache> cache;
    if (options.keep_cache) {
        cache = std::make_shared<ForwardCache>();
        cache->mode = options.mode;
        cache->tokens.assign(tokens.begin(), tokens.end());
        cache->layers.resize(config_.n_layers);
    }

    Tensor x({seq, d});
    for (std::size_t t = 0; t < seq; ++t) {
        auto dst = x.row(t);
        auto te = base_.tok_emb.row(tokens[t]);
        auto pe = base_.pos_emb.row(t);
        for (std::size_t c = 0; c < d; ++c) dst[c] = te[c] + pe[c];
    }

    std::size_t routed_kept = 0;
    std::size_t routed_total = 0;
    std::optional<QaSelection> selection;

    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        const auto& w = base_.layers[l];
        LayerCache local;
        LayerCache& lc = cache ? cache->layers[l] : local;
        const LayerAdapters* adapters = qi_mode ? &qi_->layers[l] : nullptr;

        lc.x_in = x;
        lc.a = layer_norm(x, w.ln1_g, w.ln1_b, &lc.ln1);

        auto project = [&](Projection p, const Tensor& in) {
            const lora::RoutedLora* ad = adapters ? adapters->adapter(p) : nullptr;
            if (ad == nullptr) return linear(in, w.projection(p));
            auto& slot = lc.proj[static_cast<std::size_t>(p)];
            slot.emplace();
            return ad->forward(in, w.projection(p), options.training, options.dropout_rng, &*slot);
        };
        lc.q = project(Projection::kQuery, lc.a);
        lc.k = project(Projection::kKey, lc.a);
        lc.v = project(Projection::kValue, lc.a);

        lc.routed = qi_mode && qi_->config.value_routing;
        if (lc.routed) {
            lc.v_read = kv::route_values(lc.a, lc.v, heads, qi_->config.keep, adapters->router, adapters->recon,
                                         &lc.routing);
            for (auto bit : lc.routing.keep) routed_kept += bit;
            routed_total += lc.routing.keep.size();
        } else {
            lc.v_read = lc.v;
        }

        if (l == first_compressed && (qa_mode || options.keep_split)) {
            if (options.keep_split) {
                result.split_hidden = lc.x_in;
                result.split_values = lc.v;
            }
            if (qa_mode) {
                const Tensor* probe_attn = result.probe_attention ? &*result.probe_attention : nullptr;
                SplitContext ctx{lc.x_in, probe_attn, lc.v, heads, context};
                selection = options.mask_source->select(ctx);
                const auto& m = selection->mask;
                if (m.rows() != seq || m.context_rows() != context || selection->token_alive.size() != seq ||
                    m.groups() == 0 || dh % m.groups() != 0) {
                    throw DimensionError("forward: mask source returned a selection that does not fit the sequence");
                }
            }
        }

        const bool compressed = qa_mode && l >= first_compressed;
        Tensor v_query_rows;
        std::size_t query_begin = seq;
        const std::vector<std::uint8_t>* alive = nullptr;
        if (compressed) {
            query_begin = context;
            alive = &selection->token_alive;
            v_query_rows = lc.v;
            const auto& m = selection->mask;
            const std::size_t width = dh / m.groups();
            for (std::size_t j = 0; j < context; ++j) {
                auto row = v_query_rows.row(j);
                for (std::size_t h = 0; h < heads; ++h) {
                    for (std::size_t g = 0; g < m.groups(); ++g) {
                        if ((*alive)[j] && m.keep(j, g)) continue;
                        for (std::size_t i = g * width; i < (g + 1) * width; ++i) row[h * dh + i] = 0.0;
                    }
                }
            }
        }
        const Tensor& v_q = compressed ? v_query_rows : lc.v_read;

        lc.attn = Tensor({seq, d});
        lc.probs.resize(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            attend(block(lc.q, h * dh, dh), block(lc.k, h * dh, dh), block(lc.v_read, h * dh, dh),
                   block(v_q, h * dh, dh), query_begin, alive, true, lc.probs[h], block(lc.attn, h * dh, dh));
        }
        if (probe && *probe == l) {
            Tensor avg({seq, seq});
            for (const auto& p : lc.probs) view(avg) += view(p);
            view(avg) /= static_cast<double>(heads);
            result.probe_attention = std::move(avg);
        }
        if (options.keep_snapshot) {
            result.snapshot.keys.push_back(lc.k);
            result.snapshot.values.push_back(v_q);
        }

        Tensor o = project(Projection::kOutput, lc.attn);
        lc.x_mid = lc.x_in;
        view(lc.x_mid) += view(o);
        lc.m = layer_norm(lc.x_mid, w.ln2_g, w.ln2_b, &lc.ln2);
        lc.ff_pre = linear(lc.m, w.w1);
        add_bias(lc.ff_pre, w.b1.data());
        lc.ff_act = gelu(lc.ff_pre);
        Tensor f = linear(lc.ff_act, w.w2);
        add_bias(f, w.b2.data());
        x = lc.x_mid;
        view(x) += view(f);
    }

    Tensor hf = layer_norm(x, base_.lnf_g, base_.lnf_b, cache ? &cache->lnf : nullptr);
    result.logits = linear(hf, base_.head);
    if (cache) cache->hf = std::move(hf);

    if (qi_mode && routed_total > 0) {
        const double rho = static_cast<double>(routed_kept) / static_cast<double>(routed_total);
        result.snapshot.retention = kv::RetentionStats{1.0, rho, (1.0 + rho) / 2.0};
    } else if (qa_mode) {
        result.snapshot.retention = qa_retention(*selection);
    }
    result.selection = std::move(selection);
    result.cache = std::move(cache);
    return result;
}

void Transformer::backward(const ForwardCache& cache, const Tensor& dlogits) {
    if (cache.mode == Mode::kQaCompressed) throw ConfigError("backward: qa_compressed mode is inference-only");
    const std::size_t seq = cache.tokens.size();
    const std::size_t d = config_.d_model;
    const std::size_t heads = config_.n_heads;
    const std::size_t dh = config_.d_head;
    require_shape(dlogits, {seq, config_.vocab_size}, "backward dlogits");
    const bool qi_mode = cache.mode == Mode::kQiRouted;
    auto g = [](Tensor& t) { return t.has_grad() ? t.grad() : std::span<double>{}; };

    Tensor dhf(cache.hf.shape());
    linear_backward(cache.hf, base_.head, dlogits, &dhf, g(base_.head));
    Tensor dx = layer_norm_backward(cache.lnf, base_.lnf_g, dhf, g(base_.lnf_g), g(base_.lnf_b));

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t li = config_.n_layers; li-- > 0;) {
        auto& w = base_.layers[li];
        const auto& lc = cache.layers[li];
        LayerAdapters* adapters = qi_mode ? &qi_->layers[li] : nullptr;

        auto project_backward = [&](Projection p, const Tensor& in, const Tensor& dy, Tensor& din) {
            Tensor& weight = w.projection(p);
            const auto& slot = lc.proj[static_cast<std::size_t>(p)];
            lora::RoutedLora* ad = adapters ? adapters->adapter(p) : nullptr;
            if (ad != nullptr && slot) {
                Tensor dxi = ad->backward(*slot, weight, dy, g(weight));
                view(din) += view(dxi);
            } else {
                linear_backward(in, weight, dy, &din, g(weight));
            }
        };

        // feed-forward block
        Tensor dact(lc.ff_act.shape());
        linear_backward(lc.ff_act, w.w2, dx, &dact, g(w.w2));
        bias_backward(dx, g(w.b2));
        Tensor dpre = gelu_backward(lc.ff_pre, dact);
        bias_backward(dpre, g(w.b1));
        Tensor dm(lc.m.shape());
        linear_backward(lc.m, w.w1, dpre, &dm, g(w.w1));
        Tensor dx_mid = dx;
        view(dx_mid) += view(layer_norm_backward(lc.ln2, w.ln2_g, dm, g(w.ln2_g), g(w.ln2_b)));

        // attention block
        Tensor dattn({seq, d});
        project_backward(Projection::kOutput, lc.attn, dx_mid, dattn);
        Tensor dq({seq, d});
        Tensor dk({seq, d});
        Tensor dv_read({seq, d});
        for (std::size_t h = 0; h < heads; ++h) {
            const auto p = view(lc.probs[h]);
            const auto dout = block(dattn, h * dh, dh);
            detail::RowMat dp = dout * block(lc.v_read, h * dh, dh).transpose();
            block(dv_read, h * dh, dh).noalias() += p.transpose() * dout;
            for (Eigen::Index i = 0; i < dp.rows(); ++i) {
                const double dot = p.row(i).dot(dp.row(i));
                dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix() * scale;
            }
            block(dq, h * dh, dh).noalias() += dp * block(lc.k, h * dh, dh);
            block(dk, h * dh, dh).noalias() += dp.transpose() * block(lc.q, h * dh, dh);
        }
        Tensor dv = lc.routed ? kv::route_values_backward(lc.routing, adapters->recon, dv_read, heads) : dv_read;

        Tensor da({seq, d});
        project_backward(Projection::kQuery, lc.a, dq, da);
        project_backward(Projection::kKey, lc.a, dk, da);
        project_backward(Projection::kValue, lc.a, dv, da);
        dx = std::move(dx_mid);
        view(dx) += view(layer_norm_backward(lc.ln1, w.ln1_g, da, g(w.ln1_g), g(w.ln1_b)));
    }

    if (base_.tok_emb.has_grad()) {
        for (std::size_t t = 0; t < seq; ++t) {
            axpy(1.0, dx.row(t), base_.tok_emb.grad().subspan(cache.tokens[t] * d, d));
            axpy(1.0, dx.row(t), base_.pos_emb.grad().subspan(t * d, d));
        }
    }
}

Tensor Transformer::collect_attention_mass(std::span<const std::size_t> tokens, std::size_t probe_layer) const {
    if (probe_layer >= config_.n_layers) {
        throw ArgumentError("collect_attention_mass: layer " + std::to_string(probe_layer) + " out of range");
    }
    ForwardOptions opts;
    opts.probe_layer = probe_layer;
    return std::move(*forward(tokens, opts).probe_attention);
}

}  // namespace subtoken::model
