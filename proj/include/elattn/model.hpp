#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "elattn/attention.hpp"
#include "elattn/tensor.hpp"

namespace elattn {

enum class Architecture { EncoderDecoder, DecoderOnly };
enum class AttentionMode { MhaNoCache, MhaCached, El };

inline const char* to_string(AttentionMode m) {
    switch (m) {
        case AttentionMode::MhaNoCache: return "mha-nocache";
        case AttentionMode::MhaCached: return "mha-cached";
        case AttentionMode::El: return "el";
    }
    return "?";
}

inline const char* to_string(Architecture a) {
    return a == Architecture::EncoderDecoder ? "encoder-decoder" : "decoder-only";
}

constexpr int kPadId = 0;
constexpr int kBosId = 1;
constexpr int kEosId = 2;

struct ModelConfig {
    Architecture arch = Architecture::EncoderDecoder;
    int enc_layers = 2;
    int dec_layers = 2;
    int d_m = 32;
    int h = 4;
    int d_k = 8;  // defaults to d_m / h
    int d_ff = 64;
    int vocab = 101;
    int max_positions = 256;
    uint64_t seed = 1;

    void validate() const {
        if (dec_layers < 1) throw ParamError("ModelConfig: decoder layers must be >= 1");
        if (arch == Architecture::EncoderDecoder && enc_layers < 1)
            throw ParamError("ModelConfig: encoder layers must be >= 1");
        if (vocab < 4) throw ParamError("ModelConfig: vocab must be >= 4 (pad/bos/eos reserved)");
        if (d_m < 1 || h < 1 || d_k < 1 || d_ff < 1 || max_positions < 1)
            throw ParamError("ModelConfig: dimensions must be positive");
    }
};

struct LayerNormParams {
    Tensor gain, shift;  // each length d_m
};

struct FfnParams {
    Tensor W1, b1;  // d_m x d_ff, d_ff
    Tensor W2, b2;  // d_ff x d_m, d_m
};

struct EncoderLayer {
    AttentionParams self_attn;
    LayerNormParams ln1, ln2;
    FfnParams ffn;
};

struct DecoderLayer {
    AttentionParams self_attn;
    LayerNormParams ln1;
    AttentionParams cross_attn;  // encoder-decoder only
    LayerNormParams ln_cross;    // encoder-decoder only
    FfnParams ffn;
    LayerNormParams ln2;
};

// Pre-norm transformer: x + Attn(LN(x)), x + FFN(LN(x)), final LN before
// the tied output projection. Learned absolute positions.
struct Model {
    ModelConfig config;
    Tensor tok_emb;  // vocab x d_m (also the tied output projection)
    Tensor pos_emb;  // max_positions x d_m
    std::vector<EncoderLayer> encoder;
    LayerNormParams enc_final_ln;  // encoder-decoder only
    std::vector<DecoderLayer> decoder;
    LayerNormParams dec_final_ln;
};

constexpr double kLnEps = 1e-5;

namespace detail {

inline LayerNormParams random_ln(int d_m, Rng& rng) {
    LayerNormParams ln;
    ln.gain = seeded_uniform({d_m}, rng, -0.1, 0.1);
    ln.shift = seeded_uniform({d_m}, rng, -0.1, 0.1);
    return ln;
}

inline FfnParams random_ffn(int d_m, int d_ff, Rng& rng) {
    FfnParams f;
    f.W1 = seeded_uniform({d_m, d_ff}, rng, -0.1, 0.1);
    f.b1 = seeded_uniform({d_ff}, rng, -0.1, 0.1);
    f.W2 = seeded_uniform({d_ff, d_m}, rng, -0.1, 0.1);
    f.b2 = seeded_uniform({d_m}, rng, -0.1, 0.1);
    return f;
}

inline Tensor ffn_forward(const Tensor& x, const FfnParams& f) {
    Tensor hcur = add_row_vector(matmul(x, f.W1), f.b1);
    for (double& v : hcur.data()) v = v > 0.0 ? v : 0.0;  // ReLU
    return add_row_vector(matmul(hcur, f.W2), f.b2);
}

}  // namespace detail

// All weights drawn from seeded_uniform(-0.1, 0.1) in the documented
// traversal order (see README "Checkpoint format"): token embedding,
// position embedding, encoder layers (self-attn, ln1, ffn, ln2), encoder
// final LN, decoder layers (self-attn, ln1, [cross-attn, ln_cross],
// ffn, ln2), decoder final LN.
inline Model init_model(const ModelConfig& config) {
    config.validate();
    Model m;
    m.config = config;
    Rng rng(config.seed);
    m.tok_emb = seeded_uniform({config.vocab, config.d_m}, rng, -0.1, 0.1);
    m.pos_emb = seeded_uniform({config.max_positions, config.d_m}, rng, -0.1, 0.1);
    if (config.arch == Architecture::EncoderDecoder) {
        for (int l = 0; l < config.enc_layers; ++l) {
            EncoderLayer el;
            el.self_attn = AttentionParams::random(config.h, config.d_m, config.d_k, rng);
            el.ln1 = detail::random_ln(config.d_m, rng);
            el.ffn = detail::random_ffn(config.d_m, config.d_ff, rng);
            el.ln2 = detail::random_ln(config.d_m, rng);
            m.encoder.push_back(std::move(el));
        }
        m.enc_final_ln = detail::random_ln(config.d_m, rng);
    }
    for (int l = 0; l < config.dec_layers; ++l) {
        DecoderLayer dl;
        dl.self_attn = AttentionParams::random(config.h, config.d_m, config.d_k, rng);
        dl.ln1 = detail::random_ln(config.d_m, rng);
        if (config.arch == Architecture::EncoderDecoder) {
            dl.cross_attn = AttentionParams::random(config.h, config.d_m, config.d_k, rng);
            dl.ln_cross = detail::random_ln(config.d_m, rng);
        }
        dl.ffn = detail::random_ffn(config.d_m, config.d_ff, rng);
        dl.ln2 = detail::random_ln(config.d_m, rng);
        m.decoder.push_back(std::move(dl));
    }
    m.dec_final_ln = detail::random_ln(config.d_m, rng);
    return m;
}

namespace detail {

inline Tensor embed(const Model& m, const std::vector<int>& tokens, int64_t pos_offset) {
    const int64_t n = static_cast<int64_t>(tokens.size());
    if (pos_offset + n > m.config.max_positions)
        throw LengthError("sequence exceeds max_positions=" + std::to_string(m.config.max_positions));
    Tensor x({n, m.config.d_m});
    for (int64_t i = 0; i < n; ++i) {
        const int tok = tokens[static_cast<size_t>(i)];
        if (tok < 0 || tok >= m.config.vocab) throw InputError("token id out of range: " + std::to_string(tok));
        for (int64_t j = 0; j < m.config.d_m; ++j)
            x.at(i, j) = quantize(m.tok_emb.at(tok, j) + m.pos_emb.at(pos_offset + i, j));
    }
    return x;
}

inline Tensor ln(const Tensor& x, const LayerNormParams& p) {
    return layer_norm(x, p.gain, p.shift, kLnEps);
}

// Full self-attention over all rows (bidirectional when causal=false,
// row i restricted to rows 0..i when causal=true). Matrix-form per head
// so encoding long sequences stays affordable.
inline Tensor full_self_attention(const Tensor& y, const AttentionParams& p, bool causal) {
    const int64_t n = y.rows();
    Tensor out({n, p.d_m});
    for (int i = 0; i < p.h; ++i) {
        Tensor Qi = add_row_vector(matmul(y, p.Wq[i]), p.bq[i]);
        Tensor Ki = matmul(y, p.Wk[i]);
        if (p.include_key_bias) Ki = add_row_vector(Ki, p.bk[i]);
        Tensor Vi = matmul(y, p.Wv[i]);
        if (p.include_value_bias) Vi = add_row_vector(Vi, p.bv[i]);
        Tensor scores = matmul(Qi, transpose(Ki));
        if (causal) {
            // Row r may only see columns 0..r; softmax each prefix
            // separately to avoid -inf bookkeeping.
            Tensor probs({n, n});
            for (int64_t r = 0; r < n; ++r) {
                Tensor row({1, r + 1});
                for (int64_t c = 0; c <= r; ++c) row.at(0, c) = scores.at(r, c);
                Tensor pr = scaled_softmax_rows(row, p.d_k);
                for (int64_t c = 0; c <= r; ++c) probs.at(r, c) = pr.at(0, c);
            }
            out = add(out, matmul(matmul(probs, Vi), p.Wo[i]));
        } else {
            Tensor probs = scaled_softmax_rows(scores, p.d_k);
            out = add(out, matmul(matmul(probs, Vi), p.Wo[i]));
        }
    }
    return add_row_vector(out, p.bo);
}

}  // namespace detail

// Encoder forward. The returned tensor is the entirety of the EL-mode
// cross-attention cache.
inline Tensor encode(const Model& m, const std::vector<int>& tokens) {
    if (m.config.arch != Architecture::EncoderDecoder)
        throw ModeError("encode: model is decoder-only");
    if (tokens.empty()) throw InputError("encode: empty input");
    Tensor x = detail::embed(m, tokens, 0);
    for (const EncoderLayer& layer : m.encoder) {
        Tensor y = detail::ln(x, layer.ln1);
        x = add(x, detail::full_self_attention(y, layer.self_attn, /*causal=*/false));
        Tensor y2 = detail::ln(x, layer.ln2);
        x = add(x, detail::ffn_forward(y2, layer.ffn));
    }
    return detail::ln(x, m.enc_final_ln);
}

// Generation-time state. Input-related storage depends on the mode:
//   El          — the shared encoder output (enc-dec) or per-layer prefix
//                 hidden states (decoder-only), stored once for all beams.
//   MhaCached   — per-layer, per-head projected K/V, replicated per beam.
//   MhaNoCache  — token ids only; everything is recomputed each step.
struct DecoderState {
    AttentionMode mode = AttentionMode::MhaCached;
    Architecture arch = Architecture::EncoderDecoder;
    int beams = 1;
    int64_t input_positions = 0;  // encoder length (enc-dec) or prefix length

    Tensor encoder_output;               // enc-dec, all modes
    std::vector<Tensor> prefix_hidden;   // [layer], decoder-only El; shared across beams
    std::vector<int> prefix_tokens;      // decoder-only

    struct Lane {
        std::vector<KvCache> cross_kv;  // [layer], enc-dec MhaCached
        std::vector<KvCache> self_kv;   // [layer], MhaCached and El
        std::vector<int> tokens;        // generated tokens fed so far
        Tensor last_logits;
    };
    std::vector<Lane> lanes;

    int64_t generated(int lane = 0) const { return static_cast<int64_t>(lanes[static_cast<size_t>(lane)].tokens.size()); }

    // Bytes held for input-related state (the published cache-size quantity).
    size_t input_state_bytes(int bytes_per_value = 8) const {
        size_t total = 0;
        if (arch == Architecture::EncoderDecoder) {
            if (mode == AttentionMode::MhaCached) {
                for (const Lane& lane : lanes)
                    for (const KvCache& c : lane.cross_kv) total += c.bytes(bytes_per_value);
            } else {
                total += static_cast<size_t>(encoder_output.size()) * static_cast<size_t>(bytes_per_value);
            }
        } else {
            if (mode == AttentionMode::El) {
                for (const Tensor& t : prefix_hidden)
                    total += static_cast<size_t>(t.size()) * static_cast<size_t>(bytes_per_value);
            } else if (mode == AttentionMode::MhaCached) {
                for (const Lane& lane : lanes)
                    for (const KvCache& c : lane.self_kv) {
                        const int64_t rows = std::min<int64_t>(c.t, input_positions);
                        total += static_cast<size_t>(2 * rows * c.h * c.d_k) *
                                 static_cast<size_t>(bytes_per_value);
                    }
            }
        }
        return total;
    }

    size_t total_cache_bytes(int bytes_per_value = 8) const {
        size_t total = input_state_bytes(bytes_per_value);
        for (const Lane& lane : lanes)
            for (const KvCache& c : lane.self_kv) {
                int64_t rows = c.t;
                if (arch == Architecture::DecoderOnly && mode == AttentionMode::MhaCached)
                    rows -= std::min<int64_t>(c.t, input_positions);  // already counted
                total += static_cast<size_t>(2 * rows * c.h * c.d_k) * static_cast<size_t>(bytes_per_value);
            }
        return total;
    }

    // Gather: the new lane i becomes a copy of old lane idx[i]. Parents
    // may repeat (beam expansion) and the lane count may change.
    void gather_lanes(const std::vector<int>& idx) {
        if (idx.empty()) throw StateError("gather_lanes: all lanes dropped");
        for (int p : idx)
            if (p < 0 || p >= beams) throw ParamError("gather_lanes: lane index out of range");
        std::vector<Lane> next;
        next.reserve(idx.size());
        for (int p : idx) next.push_back(lanes[static_cast<size_t>(p)]);
        lanes = std::move(next);
        beams = static_cast<int>(lanes.size());
    }

    void permute_lanes(const std::vector<int>& perm) {
        if (static_cast<int>(perm.size()) != beams)
            throw ParamError("permute_lanes: permutation size must equal beam count");
        std::vector<bool> seen(perm.size(), false);
        for (int p : perm) {
            if (p < 0 || p >= beams || seen[static_cast<size_t>(p)])
                throw ParamError("permute_lanes: not a valid permutation");
            seen[static_cast<size_t>(p)] = true;
        }
        gather_lanes(perm);
    }

    void keep_lanes(const std::vector<bool>& keep) {
        if (static_cast<int>(keep.size()) != beams)
            throw ParamError("keep_lanes: mask size must equal beam count");
        std::vector<Lane> next;
        for (size_t i = 0; i < keep.size(); ++i)
            if (keep[i]) next.push_back(std::move(lanes[i]));
        if (next.empty()) throw StateError("keep_lanes: all lanes dropped");
        lanes = std::move(next);
        beams = static_cast<int>(lanes.size());
    }
};

namespace detail {

// From-scratch causal forward over the decoder; returns logits for the
// last position. This is the MhaNoCache execution path and doubles as
// the from-scratch reference for the incremental modes.
inline Tensor full_decoder_forward(const Model& m, const std::vector<int>& dec_tokens,
                                   const Tensor* encoder_output, int64_t pos_offset) {
    Tensor x = embed(m, dec_tokens, pos_offset);
    for (const DecoderLayer& layer : m.decoder) {
        Tensor y = ln(x, layer.ln1);
        x = add(x, full_self_attention(y, layer.self_attn, /*causal=*/true));
        if (m.config.arch == Architecture::EncoderDecoder) {
            Tensor yc = ln(x, layer.ln_cross);
            Tensor cross({x.rows(), m.config.d_m});
            for (int64_t r = 0; r < x.rows(); ++r) {
                Tensor c = multi_head_attention(yc.row(r), *encoder_output, layer.cross_attn);
                for (int64_t j = 0; j < m.config.d_m; ++j) cross.at(r, j) = c.at(0, j);
            }
            x = add(x, cross);
        }
        Tensor y2 = ln(x, layer.ln2);
        x = add(x, ffn_forward(y2, layer.ffn));
    }
    Tensor last = ln(x.row(x.rows() - 1), m.dec_final_ln);
    Tensor logits = matmul(last, transpose(m.tok_emb));
    return logits.reshape({m.config.vocab});
}

// Incremental step body shared by MhaCached and El.
inline Tensor incremental_decoder_step(const Model& m, DecoderState& state, int lane_idx,
                                       const Tensor& x_in) {
    DecoderState::Lane& lane = state.lanes[static_cast<size_t>(lane_idx)];
    Tensor x = x_in;
    for (size_t l = 0; l < m.decoder.size(); ++l) {
        const DecoderLayer& layer = m.decoder[l];
        Tensor y = ln(x, layer.ln1);
        Tensor att;
        if (state.arch == Architecture::DecoderOnly && state.mode == AttentionMode::El) {
            lane.self_kv[l].append(y, layer.self_attn);
            att = mixed_self_attention(y, state.prefix_hidden[l], lane.self_kv[l], layer.self_attn);
        } else {
            att = mha_incremental_step(y, y, lane.self_kv[l], layer.self_attn);
        }
        x = add(x, att);
        if (state.arch == Architecture::EncoderDecoder) {
            Tensor yc = ln(x, layer.ln_cross);
            Tensor cross = state.mode == AttentionMode::El
                               ? el_attention(yc, state.encoder_output, layer.cross_attn)
                               : attention_over_cache(yc, lane.cross_kv[l], layer.cross_attn);
            x = add(x, cross);
        }
        Tensor y2 = ln(x, layer.ln2);
        x = add(x, ffn_forward(y2, layer.ffn));
    }
    Tensor last = ln(x, m.dec_final_ln);
    Tensor logits = matmul(last, transpose(m.tok_emb));
    return logits.reshape({m.config.vocab});
}

}  // namespace detail

// Initializes generation state.
//   encoder-decoder: `input` is ignored as tokens; pass the encoder output
//     via `encoder_output`.
//   decoder-only: `prefix` tokens are ingested causally; the state ends
//     positioned after the last prefix token, with its logits recorded.
inline DecoderState init_decoder_state(const Model& m, const Tensor& encoder_output,
                                       AttentionMode mode, int beams) {
    if (m.config.arch != Architecture::EncoderDecoder)
        throw ModeError("init_decoder_state: tensor-input form requires encoder-decoder");
    if (beams < 1) throw ParamError("init_decoder_state: beams must be >= 1");
    if (encoder_output.cols() != m.config.d_m)
        throw ShapeError("init_decoder_state: encoder output width must equal d_m");
    DecoderState st;
    st.mode = mode;
    st.arch = m.config.arch;
    st.beams = beams;
    st.input_positions = encoder_output.rows();
    st.encoder_output = encoder_output;
    DecoderState::Lane lane0;
    lane0.self_kv.assign(m.decoder.size(), KvCache(m.config.h, m.config.d_k));
    if (mode == AttentionMode::MhaCached) {
        for (const DecoderLayer& layer : m.decoder) {
            KvCache c(m.config.h, m.config.d_k);
            for (int64_t r = 0; r < encoder_output.rows(); ++r)
                c.append(encoder_output.row(r), layer.cross_attn);
            lane0.cross_kv.push_back(std::move(c));
        }
    }
    st.lanes.assign(static_cast<size_t>(beams), lane0);
    return st;
}

inline DecoderState init_decoder_state(const Model& m, const std::vector<int>& prefix,
                                       AttentionMode mode, int beams) {
    if (m.config.arch != Architecture::DecoderOnly)
        throw ModeError("init_decoder_state: token-prefix form requires decoder-only");
    if (beams < 1) throw ParamError("init_decoder_state: beams must be >= 1");
    if (prefix.empty()) throw InputError("init_decoder_state: decoder-only prefix must be non-empty");
    DecoderState st;
    st.mode = mode;
    st.arch = m.config.arch;
    st.beams = 1;
    st.input_positions = static_cast<int64_t>(prefix.size());
    st.prefix_tokens = prefix;
    DecoderState::Lane lane0;
    lane0.self_kv.assign(m.decoder.size(), KvCache(m.config.h, m.config.d_k));

    if (mode == AttentionMode::MhaNoCache) {
        lane0.last_logits = detail::full_decoder_forward(m, prefix, nullptr, 0);
    } else if (mode == AttentionMode::El) {
        st.prefix_hidden.assign(m.decoder.size(), Tensor());
        // Causal ingestion: each prefix token's normalized input joins the
        // shared per-layer hidden cache before it attends.
        for (size_t pidx = 0; pidx < prefix.size(); ++pidx) {
            Tensor x = detail::embed(m, {prefix[pidx]}, static_cast<int64_t>(pidx));
            for (size_t l = 0; l < m.decoder.size(); ++l) {
                const DecoderLayer& layer = m.decoder[l];
                Tensor y = detail::ln(x, layer.ln1);
                Tensor& hid = st.prefix_hidden[l];
                if (hid.empty()) {
                    hid = y;
                } else {
                    Tensor grown({hid.rows() + 1, hid.cols()});
                    for (int64_t i = 0; i < hid.size(); ++i) grown.at(i) = hid.at(i);
                    for (int64_t j = 0; j < y.cols(); ++j) grown.at(hid.rows(), j) = y.at(0, j);
                    hid = grown;
                }
                KvCache empty_gen(m.config.h, m.config.d_k);
                Tensor att = mixed_self_attention(y, hid, empty_gen, layer.self_attn);
                x = add(x, att);
                Tensor y2 = detail::ln(x, layer.ln2);
                x = add(x, detail::ffn_forward(y2, layer.ffn));
            }
            if (pidx + 1 == prefix.size()) {
                Tensor last = detail::ln(x, m.dec_final_ln);
                lane0.last_logits = matmul(last, transpose(m.tok_emb)).reshape({m.config.vocab});
            }
        }
    } else {  // MhaCached: prefix K/V enter the per-layer self caches
        for (size_t pidx = 0; pidx < prefix.size(); ++pidx) {
            Tensor x = detail::embed(m, {prefix[pidx]}, static_cast<int64_t>(pidx));
            for (size_t l = 0; l < m.decoder.size(); ++l) {
                const DecoderLayer& layer = m.decoder[l];
                Tensor y = detail::ln(x, layer.ln1);
                Tensor att = mha_incremental_step(y, y, lane0.self_kv[l], layer.self_attn);
                x = add(x, att);
                Tensor y2 = detail::ln(x, layer.ln2);
                x = add(x, detail::ffn_forward(y2, layer.ffn));
            }
            if (pidx + 1 == prefix.size()) {
                Tensor last = detail::ln(x, m.dec_final_ln);
                lane0.last_logits = matmul(last, transpose(m.tok_emb)).reshape({m.config.vocab});
            }
        }
    }
    st.lanes.assign(static_cast<size_t>(beams), lane0);
    st.beams = beams;
    return st;
}

// Feeds one token into the given lane and returns logits for the next
// position. MhaNoCache recomputes the whole history from scratch.
inline Tensor decoder_step(const Model& m, DecoderState& state, int lane_idx, int token) {
    if (lane_idx < 0 || lane_idx >= state.beams) throw ParamError("decoder_step: bad lane index");
    if (state.arch != m.config.arch) throw StateError("decoder_step: state/model architecture mismatch");
    DecoderState::Lane& lane = state.lanes[static_cast<size_t>(lane_idx)];
    const int64_t pos = (state.arch == Architecture::DecoderOnly ? state.input_positions : 0) +
                        static_cast<int64_t>(lane.tokens.size());
    if (pos >= m.config.max_positions)
        throw LengthError("decoder_step: position " + std::to_string(pos) + " exceeds max_positions");

    Tensor logits;
    if (state.mode == AttentionMode::MhaNoCache) {
        lane.tokens.push_back(token);
        if (state.arch == Architecture::EncoderDecoder) {
            logits = detail::full_decoder_forward(m, lane.tokens, &state.encoder_output, 0);
        } else {
            std::vector<int> all = state.prefix_tokens;
            all.insert(all.end(), lane.tokens.begin(), lane.tokens.end());
            logits = detail::full_decoder_forward(m, all, nullptr, 0);
        }
    } else {
        Tensor x = detail::embed(m, {token}, pos);
        logits = detail::incremental_decoder_step(m, state, lane_idx, x);
        lane.tokens.push_back(token);
    }
    lane.last_logits = logits;
    return logits;
}

inline Tensor decoder_step(const Model& m, DecoderState& state, int token) {
    return decoder_step(m, state, 0, token);
}

}  // namespace elattn
