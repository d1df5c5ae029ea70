#pragma once

#include <string>
#include <vector>

#include "elattn/tensor.hpp"

namespace elattn {

// Per-layer attention weights. h heads, each with d_m x d_k projections
// for query/key/value and a d_k x d_m output projection, plus per-head
// biases and one shared output bias applied after head summation.
struct AttentionParams {
    int h = 0;
    int d_m = 0;
    int d_k = 0;
    std::vector<Tensor> Wq, Wk, Wv;  // h entries, each d_m x d_k
    std::vector<Tensor> Wo;          // h entries, each d_k x d_m
    std::vector<Tensor> bq, bk, bv;  // h entries, each length d_k
    Tensor bo;                       // length d_m
    bool include_key_bias = true;
    bool include_value_bias = true;

    void validate() const {
        if (h < 1 || d_m < 1 || d_k < 1) throw ParamError("AttentionParams: h, d_m, d_k must be >= 1");
        auto need = [&](const std::vector<Tensor>& ts, int64_t r, int64_t c, const char* name) {
            if (static_cast<int>(ts.size()) != h)
                throw ShapeError(std::string("AttentionParams: ") + name + " must have h entries");
            for (const Tensor& t : ts)
                if (t.ndim() != 2 || t.dim(0) != r || t.dim(1) != c)
                    throw ShapeError(std::string("AttentionParams: ") + name + " entry has shape " +
                                     t.shape_str());
        };
        need(Wq, d_m, d_k, "Wq");
        need(Wk, d_m, d_k, "Wk");
        need(Wv, d_m, d_k, "Wv");
        need(Wo, d_k, d_m, "Wo");
        auto need_vec = [&](const std::vector<Tensor>& ts, int64_t len, const char* name) {
            if (static_cast<int>(ts.size()) != h)
                throw ShapeError(std::string("AttentionParams: ") + name + " must have h entries");
            for (const Tensor& t : ts)
                if (t.size() != len)
                    throw ShapeError(std::string("AttentionParams: ") + name + " entry has length " +
                                     std::to_string(t.size()));
        };
        need_vec(bq, d_k, "bq");
        need_vec(bk, d_k, "bk");
        need_vec(bv, d_k, "bv");
        if (bo.size() != d_m) throw ShapeError("AttentionParams: bo must have length d_m");
    }

    // Weights drawn in a fixed order: Wq[0..h), Wk, Wv, Wo, bq, bk, bv, bo.
    static AttentionParams random(int h, int d_m, int d_k, Rng& rng, double lo = -0.1,
                                  double hi = 0.1) {
        AttentionParams p;
        p.h = h;
        p.d_m = d_m;
        p.d_k = d_k;
        auto mats = [&](int64_t r, int64_t c) {
            std::vector<Tensor> v;
            v.reserve(static_cast<size_t>(h));
            for (int i = 0; i < h; ++i) v.push_back(seeded_uniform({r, c}, rng, lo, hi));
            return v;
        };
        p.Wq = mats(d_m, d_k);
        p.Wk = mats(d_m, d_k);
        p.Wv = mats(d_m, d_k);
        p.Wo = mats(d_k, d_m);
        auto vecs = [&](int64_t len) {
            std::vector<Tensor> v;
            v.reserve(static_cast<size_t>(h));
            for (int i = 0; i < h; ++i) v.push_back(seeded_uniform({len}, rng, lo, hi));
            return v;
        };
        p.bq = vecs(d_k);
        p.bk = vecs(d_k);
        p.bv = vecs(d_k);
        p.bo = seeded_uniform({d_m}, rng, lo, hi);
        return p;
    }
};

// Att(q, K, V) = softmax(q K^T / sqrt(d_norm)) V for a single query row.
inline Tensor single_head_attention(const Tensor& q, const Tensor& K, const Tensor& V,
                                    int64_t d_norm) {
    if (K.rows() != V.rows())
        throw ShapeError("single_head_attention: K and V row counts differ");
    if (K.rows() == 0) throw StateError("single_head_attention: empty context");
    Tensor scores = matmul(q, transpose(K));
    Tensor probs = scaled_softmax_rows(scores, d_norm);
    return matmul(probs, V);
}

// Full multi-head attention over hidden states H (used as both key and
// value source), biases included per the flags.
inline Tensor multi_head_attention(const Tensor& q, const Tensor& H, const AttentionParams& p) {
    p.validate();
    if (q.cols() != p.d_m || H.cols() != p.d_m)
        throw ShapeError("multi_head_attention: q/H width must equal d_m");
    if (H.rows() < 1) throw StateError("multi_head_attention: empty context");
    const int64_t g = q.rows();
    Tensor out({g, p.d_m});
    for (int i = 0; i < p.h; ++i) {
        Tensor Qi = add_row_vector(matmul(q, p.Wq[i]), p.bq[i]);
        Tensor Ki = matmul(H, p.Wk[i]);
        if (p.include_key_bias) Ki = add_row_vector(Ki, p.bk[i]);
        Tensor Vi = matmul(H, p.Wv[i]);
        if (p.include_value_bias) Vi = add_row_vector(Vi, p.bv[i]);
        Tensor probs = scaled_softmax_rows(matmul(Qi, transpose(Ki)), p.d_k);
        out = add(out, matmul(matmul(probs, Vi), p.Wo[i]));
    }
    return add_row_vector(out, p.bo);
}

// Incremental-decoding cache: per-head projected keys and values, one
// row appended per step. Rows are never recomputed once written; the
// projection counter lets tests assert that.
struct KvCache {
    int h = 0;
    int d_k = 0;
    int64_t t = 0;
    std::vector<std::vector<double>> K, V;  // per head, t * d_k values
    std::vector<int> projection_counts;     // per cached position

    KvCache() = default;
    KvCache(int h_, int d_k_) : h(h_), d_k(d_k_), K(static_cast<size_t>(h_)), V(static_cast<size_t>(h_)) {}

    size_t bytes(int bytes_per_value = 8) const {
        return static_cast<size_t>(2 * t * h * d_k) * static_cast<size_t>(bytes_per_value);
    }

    // Projects one hidden row through every head's key/value weights and
    // appends it.
    void append(const Tensor& hidden_row, const AttentionParams& p) {
        if (h != p.h || d_k != p.d_k)
            throw StateError("KvCache: cache head geometry does not match params");
        if (hidden_row.cols() != p.d_m) throw ShapeError("KvCache: hidden row width must equal d_m");
        for (int i = 0; i < p.h; ++i) {
            Tensor k = matmul(hidden_row, p.Wk[i]);
            if (p.include_key_bias) k = add_row_vector(k, p.bk[i]);
            Tensor v = matmul(hidden_row, p.Wv[i]);
            if (p.include_value_bias) v = add_row_vector(v, p.bv[i]);
            for (int64_t j = 0; j < p.d_k; ++j) {
                K[static_cast<size_t>(i)].push_back(k.at(0, j));
                V[static_cast<size_t>(i)].push_back(v.at(0, j));
            }
        }
        projection_counts.push_back(1);
        ++t;
    }
};

// Attention of one query row against an existing cache, nothing appended.
inline Tensor attention_over_cache(const Tensor& q, const KvCache& cache,
                                   const AttentionParams& p) {
    p.validate();
    if (cache.h != p.h || cache.d_k != p.d_k)
        throw StateError("attention_over_cache: cache does not match params");
    if (cache.t == 0) throw StateError("attention_over_cache: empty cache");
    Tensor out({1, p.d_m});
    for (int i = 0; i < p.h; ++i) {
        Tensor Qi = add_row_vector(matmul(q, p.Wq[i]), p.bq[i]);
        const auto& Krows = cache.K[static_cast<size_t>(i)];
        const auto& Vrows = cache.V[static_cast<size_t>(i)];
        Tensor scores({1, cache.t});
        for (int64_t r = 0; r < cache.t; ++r) {
            double s = 0.0;
            for (int64_t j = 0; j < p.d_k; ++j) s += Qi.at(0, j) * Krows[static_cast<size_t>(r * p.d_k + j)];
            scores.at(0, r) = quantize(s);
        }
        Tensor probs = scaled_softmax_rows(scores, p.d_k);
        Tensor ctx({1, p.d_k});
        for (int64_t r = 0; r < cache.t; ++r)
            for (int64_t j = 0; j < p.d_k; ++j)
                ctx.at(0, j) += probs.at(0, r) * Vrows[static_cast<size_t>(r * p.d_k + j)];
        for (double& v : ctx.data()) v = quantize(v);
        out = add(out, matmul(ctx, p.Wo[i]));
    }
    return add_row_vector(out, p.bo);
}

// One incremental multi-head step: append the new position's projected
// key/value, then attend over all cached positions.
inline Tensor mha_incremental_step(const Tensor& q, const Tensor& new_hidden, KvCache& cache,
                                   const AttentionParams& p) {
    cache.append(new_hidden, p);
    return attention_over_cache(q, cache, p);
}

// Expanded query: EL-Q_i = (q Wq_i + bq_i) Wk_i^T plus a per-head score
// offset s_i = (q Wq_i + bq_i) . bk_i covering the key-bias term.
struct ElQuery {
    Tensor elq;             // h x d_m, one expanded query per head
    std::vector<double> s;  // h key-bias scalars (zero when the flag is off)
};

inline ElQuery build_el_query(const Tensor& q, const AttentionParams& p) {
    p.validate();
    if (q.rows() != 1 || q.cols() != p.d_m)
        throw ShapeError("build_el_query: q must be 1 x d_m");
    ElQuery eq;
    eq.elq = Tensor({p.h, p.d_m});
    eq.s.assign(static_cast<size_t>(p.h), 0.0);
    for (int i = 0; i < p.h; ++i) {
        Tensor Qi = add_row_vector(matmul(q, p.Wq[i]), p.bq[i]);
        Tensor row = matmul(Qi, transpose(p.Wk[i]));
        for (int64_t j = 0; j < p.d_m; ++j) eq.elq.at(i, j) = row.at(0, j);
        if (p.include_key_bias) {
            double s = 0.0;
            for (int64_t j = 0; j < p.d_k; ++j) s += Qi.at(0, j) * p.bk[i].at(j);
            eq.s[static_cast<size_t>(i)] = quantize(s);
        }
    }
    return eq;
}

namespace detail {

// Sum of b_i^V W_i^O over heads plus the shared output bias; the
// probability-independent part of the EL output.
inline Tensor el_bias_terms(const AttentionParams& p) {
    Tensor out({1, p.d_m});
    if (p.include_value_bias) {
        for (int i = 0; i < p.h; ++i) {
            Tensor b({1, p.d_k});
            for (int64_t j = 0; j < p.d_k; ++j) b.at(0, j) = p.bv[i].at(j);
            out = add(out, matmul(b, p.Wo[i]));
        }
    }
    return add_row_vector(out, p.bo);
}

}  // namespace detail

// EL-attention: probabilities from the expanded query against the raw
// hidden states, weighted sum against the same hidden states, then the
// per-head value/output projections applied to the d_m-wide context.
// No n x d_k key or value tensor is ever materialized.
inline Tensor el_attention(const Tensor& q, const Tensor& H, const AttentionParams& p) {
    p.validate();
    if (H.rows() < 1) throw StateError("el_attention: empty context");
    if (q.cols() != p.d_m || H.cols() != p.d_m)
        throw ShapeError("el_attention: q/H width must equal d_m");
    ElQuery eq = build_el_query(q, p);
    Tensor Ht = transpose(H);
    Tensor out({1, p.d_m});
    for (int i = 0; i < p.h; ++i) {
        Tensor scores = matmul(eq.elq.row(i), Ht);
        const double s = eq.s[static_cast<size_t>(i)];
        if (s != 0.0)
            for (double& v : scores.data()) v = quantize(v + s);
        Tensor probs = scaled_softmax_rows(scores, p.d_k);
        Tensor ctx = matmul(probs, H);  // 1 x d_m
        out = add(out, matmul(matmul(ctx, p.Wv[i]), p.Wo[i]));
    }
    return add(out, detail::el_bias_terms(p));
}

// Folded EL-attention: g logical queries' expanded heads stacked
// head-major into one (g*h) x d_m matrix so a single matmul scores all
// heads and beams against the shared hidden states.
inline Tensor el_attention_folded(const Tensor& queries, const Tensor& H,
                                  const Tensor& bias_scalars, const AttentionParams& p) {
    p.validate();
    if (queries.rows() % p.h != 0)
        throw ShapeError("el_attention_folded: query row count " + std::to_string(queries.rows()) +
                         " not divisible by h=" + std::to_string(p.h));
    if (bias_scalars.size() != queries.rows())
        throw ShapeError("el_attention_folded: bias scalar count must equal query rows");
    if (H.rows() < 1) throw StateError("el_attention_folded: empty context");
    const int64_t g = queries.rows() / p.h;
    Tensor scores = matmul(queries, transpose(H));  // (g*h) x n
    for (int64_t r = 0; r < scores.rows(); ++r) {
        const double s = bias_scalars.at(r);
        if (s != 0.0)
            for (int64_t j = 0; j < scores.cols(); ++j)
                scores.at(r, j) = quantize(scores.at(r, j) + s);
    }
    Tensor probs = scaled_softmax_rows(scores, p.d_k);
    Tensor ctx = matmul(probs, H);  // (g*h) x d_m
    Tensor bias = detail::el_bias_terms(p);
    Tensor out({g, p.d_m});
    for (int64_t b = 0; b < g; ++b) {
        Tensor acc({1, p.d_m});
        for (int i = 0; i < p.h; ++i)
            acc = add(acc, matmul(matmul(ctx.row(b * p.h + i), p.Wv[i]), p.Wo[i]));
        for (int64_t j = 0; j < p.d_m; ++j) out.at(b, j) = quantize(acc.at(0, j) + bias.at(0, j));
    }
    return out;
}

// Builds the ElQuery rows of g queries in the folded layout.
inline std::pair<Tensor, Tensor> fold_el_queries(const std::vector<ElQuery>& queries, int h,
                                                 int d_m) {
    const int64_t g = static_cast<int64_t>(queries.size());
    Tensor q({g * h, static_cast<int64_t>(d_m)});
    Tensor s({g * h});
    for (int64_t b = 0; b < g; ++b)
        for (int i = 0; i < h; ++i) {
            for (int64_t j = 0; j < d_m; ++j) q.at(b * h + i, j) = queries[static_cast<size_t>(b)].elq.at(i, j);
            s.at(b * h + i) = queries[static_cast<size_t>(b)].s[static_cast<size_t>(i)];
        }
    return {q, s};
}

// Decoder-only self-attention: EL scores over the shared prefix hidden
// states and multi-head scores over the generated-token cache are
// concatenated, softmaxed jointly, then split for the two weighted sums.
inline Tensor mixed_self_attention(const Tensor& q, const Tensor& prefix_hidden,
                                   const KvCache& gen_cache, const AttentionParams& p) {
    p.validate();
    if (prefix_hidden.rows() < 1) throw StateError("mixed_self_attention: empty prefix");
    if (gen_cache.t > 0 && (gen_cache.h != p.h || gen_cache.d_k != p.d_k))
        throw StateError("mixed_self_attention: cache does not match params");
    const int64_t t_in = prefix_hidden.rows();
    const int64_t t_out = gen_cache.t;
    ElQuery eq = build_el_query(q, p);
    Tensor Ht = transpose(prefix_hidden);
    Tensor out({1, p.d_m});
    for (int i = 0; i < p.h; ++i) {
        Tensor Qi = add_row_vector(matmul(q, p.Wq[i]), p.bq[i]);
        Tensor scores({1, t_in + t_out});
        Tensor prefix_scores = matmul(eq.elq.row(i), Ht);
        const double s = eq.s[static_cast<size_t>(i)];
        for (int64_t j = 0; j < t_in; ++j) scores.at(0, j) = quantize(prefix_scores.at(0, j) + s);
        const auto& Krows = gen_cache.K.empty() ? std::vector<double>{} : gen_cache.K[static_cast<size_t>(i)];
        for (int64_t r = 0; r < t_out; ++r) {
            double sc = 0.0;
            for (int64_t j = 0; j < p.d_k; ++j)
                sc += Qi.at(0, j) * Krows[static_cast<size_t>(r * p.d_k + j)];
            scores.at(0, t_in + r) = quantize(sc);
        }
        Tensor probs = scaled_softmax_rows(scores, p.d_k);

        // Input part: weighted sum over raw hidden states, then Wv Wo.
        Tensor probs_in({1, t_in});
        double prob_in_mass = 0.0;
        for (int64_t j = 0; j < t_in; ++j) {
            probs_in.at(0, j) = probs.at(0, j);
            prob_in_mass += probs.at(0, j);
        }
        Tensor ctx_in = matmul(probs_in, prefix_hidden);
        Tensor head = matmul(matmul(ctx_in, p.Wv[i]), p.Wo[i]);
        if (p.include_value_bias) {
            // The joint softmax splits the unit mass between the two
            // parts, so the prefix value bias enters scaled by its share.
            Tensor b({1, p.d_k});
            for (int64_t j = 0; j < p.d_k; ++j) b.at(0, j) = quantize(p.bv[i].at(j) * prob_in_mass);
            head = add(head, matmul(b, p.Wo[i]));
        }

        // Output part: cached values already carry the value bias.
        if (t_out > 0) {
            const auto& Vrows = gen_cache.V[static_cast<size_t>(i)];
            Tensor ctx_out({1, p.d_k});
            for (int64_t r = 0; r < t_out; ++r)
                for (int64_t j = 0; j < p.d_k; ++j)
                    ctx_out.at(0, j) += probs.at(0, t_in + r) * Vrows[static_cast<size_t>(r * p.d_k + j)];
            for (double& v : ctx_out.data()) v = quantize(v);
            head = add(head, matmul(ctx_out, p.Wo[i]));
        }
        out = add(out, head);
    }
    return add_row_vector(out, p.bo);
}

}  // namespace elattn
