// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/harness/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <numeric>
#include <set>

#include "subtoken/error.hpp"
#include "subtoken/qa/selector.hpp"
#include "subtoken/qa/sources.hpp"

namespace subtoken::harness {

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::vector<double> log_softmax(std::span<const double> row) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    std::vector<double> out(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lse;
    return out;
}

std::size_t argmax(std::span<const double> row) {
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::vector<double> ranks(std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j);
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

std::string corpus_text(const CorpusSource& source, std::uint64_t seed) {
    if (source.spec == "synthetic:prose") {
        return train::synthetic_corpus(train::SyntheticDomain::kProse, source.synthetic_bytes, seed);
    }
    if (source.spec == "synthetic:logs") {
        return train::synthetic_corpus(train::SyntheticDomain::kLogs, source.synthetic_bytes, seed + 1);
    }
    if (source.spec.starts_with("synthetic:")) throw ConfigError("unknown synthetic corpus '" + source.spec + "'");
    return train::read_text_file(source.spec);
}

train::CorpusStream load_corpus(const CorpusSource& source, const DataSettings& data, std::uint64_t seed) {
    return train::CorpusStream(corpus_text(source, seed), data.seq_len, data.val_fraction, seed);
}

std::vector<train::TokenSeq> sample_inputs(const std::vector<train::TokenSeq>& pool, std::size_t n,
                                           std::uint64_t seed) {
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
    order.resize(std::min(n, order.size()));
    std::vector<train::TokenSeq> out;
    for (auto i : order) {
        const auto in = train::chunk_inputs(pool[i]);
        out.emplace_back(in.begin(), in.end());
    }
    return out;
}

std::vector<BudgetRow> budget_table(std::span<const kv::BudgetSpec> specs) {
    std::vector<BudgetRow> rows;
    for (const auto& s : specs) rows.push_back({s.token_keep, s.rho, kv::kv_retention_fraction(s)});
    return rows;
}

std::string budget_csv(std::span<const BudgetRow> rows) {
    std::string s = "tokens_kept,rho,total_kv,total_kv_pct\n";
    for (const auto& r : rows) {
        s += fmt("%.3f", r.tokens_kept) + "," + fmt("%.3f", r.rho) + "," + fmt("%.3f", r.total_kv) + "," +
             fmt("%.1f", 100.0 * r.total_kv) + "\n";
    }
    return s;
}

std::vector<QaEvalRow> qa_eval(const model::Transformer& model, const std::vector<train::TokenSeq>& inputs,
                               const QaSettings& qa, std::span<const double> rhos,
                               const train::PredictorBundle* predictor) {
    if (inputs.empty()) throw ConfigError("qa_eval: no evaluation sequences");
    struct Reference {
        Tensor logits;
        qa::OracleTargets oracle;
    };
    std::vector<Reference> refs;
    for (const auto& seq : inputs) {
        model::ForwardOptions base;
        refs.push_back({model.forward(seq, base).logits,
                        qa::oracle_targets(model, seq, qa.query_len, qa.groups, qa.probe_layer)});
    }

    std::vector<QaEvalRow> rows;
    for (double rho : rhos) {
        const qa::SelectorBudget budget{rho, qa.token_keep, qa.groups};
        QaEvalRow row;
        row.rho = rho;
        row.token_keep = qa.token_keep;
        row.total_kv = kv::kv_retention_fraction(budget.spec(0, 0));
        const std::size_t k = kv::floor_count(rho * static_cast<double>(qa.groups));
        row.matched_budget = std::abs(static_cast<double>(k) - rho * static_cast<double>(qa.groups)) < 1e-9;

        std::unique_ptr<model::MaskSource> source;
        if (predictor != nullptr) {
            source = std::make_unique<qa::PredictorMaskSource>(predictor->groups, &predictor->tokens, budget);
        } else {
            source = std::make_unique<qa::OracleMaskSource>(budget);
        }
        model::ForwardOptions opts;
        opts.mode = model::Mode::kQaCompressed;
        opts.mask_source = source.get();
        opts.query_len = qa.query_len;
        opts.probe_layer = qa.probe_layer;

        double agree = 0.0, kl = 0.0, measured = 0.0;
        std::size_t positions = 0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const auto res = model.forward(inputs[i], opts);
            measured += res.snapshot.retention.total_kv;
            const auto& ref = refs[i];
            for (std::size_t t = ref.oracle.context; t < inputs[i].size(); ++t) {
                const auto pb = log_softmax(ref.logits.row(t));
                const auto pq = log_softmax(res.logits.row(t));
                double d = 0.0;
                for (std::size_t c = 0; c < pb.size(); ++c) d += std::exp(pb[c]) * (pb[c] - pq[c]);
                kl += std::max(0.0, d);
                agree += argmax(ref.logits.row(t)) == argmax(res.logits.row(t)) ? 1.0 : 0.0;
                ++positions;
            }
            const auto spec = budget.spec(ref.oracle.context, inputs[i].size() - ref.oracle.context);
            const kv::BudgetSpec full_tokens{rho, qa.groups, 1.0, spec.context, spec.query};
            row.kept_global += qa::kept_score(qa::global_topM_mask(ref.oracle.scores, full_tokens), ref.oracle.scores);
            row.kept_fixed_k += qa::kept_score(qa::fixed_k_mask(ref.oracle.scores, k, full_tokens), ref.oracle.scores);
        }
        row.agreement = agree / static_cast<double>(positions);
        row.mean_kl = kl / static_cast<double>(positions);
        row.measured_total_kv = measured / static_cast<double>(inputs.size());
        rows.push_back(row);
    }
    return rows;
}

std::string qa_eval_csv(std::span<const QaEvalRow> rows) {
    std::string s =
        "rho,token_keep,total_kv,measured_total_kv,agreement,mean_kl,kept_score_global,kept_score_fixed_k,"
        "matched_budget\n";
    for (const auto& r : rows) {
        s += fmt("%.3f", r.rho) + "," + fmt("%.3f", r.token_keep) + "," + fmt("%.4f", r.total_kv) + "," +
             fmt("%.4f", r.measured_total_kv) + "," + fmt("%.6f", r.agreement) + "," + fmt("%.6e", r.mean_kl) + "," +
             fmt("%.6f", r.kept_global) + "," + fmt("%.6f", r.kept_fixed_k) + "," +
             (r.matched_budget ? "1" : "0") + "\n";
    }
    return s;
}

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DimensionError("spearman: inputs differ in length");
    if (x.size() < 2) return 0.0;
    const auto rx = ranks(x);
    const auto ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

DiagnosticsResult run_diagnostics(const model::Transformer& model, const std::vector<train::TokenSeq>& inputs,
                                  const QaSettings& qa, double rho) {
    DiagnosticsResult out;
    std::vector<double> alphas, ks;
    out.summary.histogram.assign(qa.groups + 1, 0);
    out.summary.expected_k = rho * static_cast<double>(qa.groups);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto t = qa::oracle_targets(model, inputs[i], qa.query_len, qa.groups, qa.probe_layer);
        const kv::BudgetSpec spec{rho, qa.groups, 1.0, t.context, inputs[i].size() - t.context};
        const auto mask = qa::global_topM_mask(t.scores, spec);
        const auto counts = mask.kept_counts();
        std::set<double> distinct_scores(t.scores.data().begin(), t.scores.data().end());
        if (distinct_scores.size() == 1) out.summary.degenerate = true;
        for (std::size_t j = 0; j < t.context; ++j) {
            DiagnosticToken tok;
            tok.sequence = i;
            tok.token_index = j;
            tok.alpha = t.alpha[j];
            tok.k = counts[j];
            tok.group_norms.assign(t.group_norms.row(j).begin(), t.group_norms.row(j).end());
            tok.mask_bits = mask.row_string(j);
            alphas.push_back(tok.alpha);
            ks.push_back(static_cast<double>(tok.k));
            ++out.summary.histogram[tok.k];
            out.tokens.push_back(std::move(tok));
        }
    }
    out.summary.tokens = out.tokens.size();
    if (!ks.empty()) out.summary.mean_k = std::accumulate(ks.begin(), ks.end(), 0.0) / static_cast<double>(ks.size());
    for (auto c : out.summary.histogram) out.summary.distinct_k += c > 0;
    out.summary.spearman = spearman(alphas, ks);
    return out;
}

std::string diagnostics_csv(const DiagnosticsResult& result) {
    std::size_t groups = result.tokens.empty() ? 0 : result.tokens.front().group_norms.size();
    std::string s = "sequence,token_index,alpha,K_j";
    for (std::size_t g = 0; g < groups; ++g) s += ",norm_g" + std::to_string(g);
    s += ",mask_bits\n";
    for (const auto& t : result.tokens) {
        s += std::to_string(t.sequence) + "," + std::to_string(t.token_index) + "," + fmt("%.9e", t.alpha) + "," +
             std::to_string(t.k);
        for (double n : t.group_norms) s += "," + fmt("%.9e", n);
        s += "," + t.mask_bits + "\n";
    }
    return s;
}

std::string diagnostics_summary_csv(const DiagnosticsSummary& summary) {
    std::string s = "tokens,mean_k,expected_k,distinct_k,spearman,degenerate";
    for (std::size_t k = 0; k < summary.histogram.size(); ++k) s += ",hist_k" + std::to_string(k);
    s += "\n" + std::to_string(summary.tokens) + "," + fmt("%.6f", summary.mean_k) + "," +
         fmt("%.6f", summary.expected_k) + "," + std::to_string(summary.distinct_k) + "," +
         fmt("%.6f", summary.spearman) + "," + (summary.degenerate ? "1" : "0");
    for (auto c : summary.histogram) s += "," + std::to_string(c);
    return s + "\n";
}

OverlapResult predictor_overlap(const model::Transformer& model, const train::PredictorBundle& predictor,
                                const std::vector<train::TokenSeq>& inputs, const QaSettings& qa, double rho,
                                std::uint64_t seed) {
    Rng rng(seed);
    OverlapResult out;
    for (const auto& seq : inputs) {
        const auto t = qa::oracle_targets(model, seq, qa.query_len, qa.groups, qa.probe_layer);
        const kv::BudgetSpec spec{rho, qa.groups, 1.0, t.context, seq.size() - t.context};
        const auto oracle = qa::global_topM_mask(t.scores, spec);
        const auto predicted = qa::global_topM_mask(predictor.groups.predict(t.hidden), spec);
        std::vector<std::size_t> ids(t.context * qa.groups);
        std::iota(ids.begin(), ids.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(ids));
        kv::SelectionMask random(seq.size(), qa.groups, t.context);
        for (std::size_t i = 0; i < spec.pair_budget(); ++i) random.set(ids[i] / qa.groups, ids[i] % qa.groups, true);
        out.jaccard += qa::mask_jaccard(predicted, oracle);
        out.random_jaccard += qa::mask_jaccard(random, oracle);
        ++out.sequences;
    }
    if (out.sequences > 0) {
        out.jaccard /= static_cast<double>(out.sequences);
        out.random_jaccard /= static_cast<double>(out.sequences);
    }
    return out;
}

}  // namespace subtoken::harness
