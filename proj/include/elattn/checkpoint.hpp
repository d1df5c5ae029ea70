#pragma once

#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elattn/model.hpp"

namespace elattn {

// Checkpoint layout (all integers little-endian):
//   bytes 0-3   magic "ELAT"
//   bytes 4-7   format version, u32 = 1
//   bytes 8-11  header length HL, u32
//   HL bytes    UTF-8 JSON ModelConfig
//   then every tensor in the init_model traversal order, raw IEEE-754
//   f64 values, row-major, no padding.
constexpr uint32_t kCheckpointVersion = 1;
inline const char kCheckpointMagic[4] = {'E', 'L', 'A', 'T'};

namespace detail {

// Visits every tensor of the model in the canonical traversal order.
inline void visit_tensors(Model& m, const std::function<void(Tensor&, const std::string&)>& fn) {
    fn(m.tok_emb, "tok_emb");
    fn(m.pos_emb, "pos_emb");
    auto visit_attn = [&](AttentionParams& p, const std::string& prefix) {
        for (int i = 0; i < p.h; ++i) fn(p.Wq[static_cast<size_t>(i)], prefix + ".Wq" + std::to_string(i));
        for (int i = 0; i < p.h; ++i) fn(p.Wk[static_cast<size_t>(i)], prefix + ".Wk" + std::to_string(i));
        for (int i = 0; i < p.h; ++i) fn(p.Wv[static_cast<size_t>(i)], prefix + ".Wv" + std::to_string(i));
        for (int i = 0; i < p.h; ++i) fn(p.Wo[static_cast<size_t>(i)], prefix + ".Wo" + std::to_string(i));
        for (int i = 0; i < p.h; ++i) fn(p.bq[static_cast<size_t>(i)], prefix + ".bq" + std::to_string(i));
        for (int i = 0; i < p.h; ++i) fn(p.bk[static_cast<size_t>(i)], prefix + ".bk" + std::to_string(i));
        for (int i = 0; i < p.h; ++i) fn(p.bv[static_cast<size_t>(i)], prefix + ".bv" + std::to_string(i));
        fn(p.bo, prefix + ".bo");
    };
    auto visit_ln = [&](LayerNormParams& ln, const std::string& prefix) {
        fn(ln.gain, prefix + ".gain");
        fn(ln.shift, prefix + ".shift");
    };
    auto visit_ffn = [&](FfnParams& f, const std::string& prefix) {
        fn(f.W1, prefix + ".W1");
        fn(f.b1, prefix + ".b1");
        fn(f.W2, prefix + ".W2");
        fn(f.b2, prefix + ".b2");
    };
    for (size_t l = 0; l < m.encoder.size(); ++l) {
        const std::string pre = "enc" + std::to_string(l);
        visit_attn(m.encoder[l].self_attn, pre + ".self");
        visit_ln(m.encoder[l].ln1, pre + ".ln1");
        visit_ffn(m.encoder[l].ffn, pre + ".ffn");
        visit_ln(m.encoder[l].ln2, pre + ".ln2");
    }
    if (m.config.arch == Architecture::EncoderDecoder) visit_ln(m.enc_final_ln, "enc_final_ln");
    for (size_t l = 0; l < m.decoder.size(); ++l) {
        const std::string pre = "dec" + std::to_string(l);
        visit_attn(m.decoder[l].self_attn, pre + ".self");
        visit_ln(m.decoder[l].ln1, pre + ".ln1");
        if (m.config.arch == Architecture::EncoderDecoder) {
            visit_attn(m.decoder[l].cross_attn, pre + ".cross");
            visit_ln(m.decoder[l].ln_cross, pre + ".ln_cross");
        }
        visit_ffn(m.decoder[l].ffn, pre + ".ffn");
        visit_ln(m.decoder[l].ln2, pre + ".ln2");
    }
    visit_ln(m.dec_final_ln, "dec_final_ln");
}

inline void put_u32_le(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

inline void put_f64_le(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double get_f64_le(const unsigned char* p) {
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(p[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

inline nlohmann::json config_to_json(const ModelConfig& c) {
    return nlohmann::json{{"architecture", c.arch == Architecture::EncoderDecoder
                                               ? "encoder-decoder"
                                               : "decoder-only"},
                          {"L_enc", c.enc_layers},
                          {"L", c.dec_layers},
                          {"d_m", c.d_m},
                          {"h", c.h},
                          {"d_k", c.d_k},
                          {"d_ff", c.d_ff},
                          {"vocab", c.vocab},
                          {"max_positions", c.max_positions},
                          {"seed", c.seed}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    const std::string arch = j.at("architecture").get<std::string>();
    if (arch == "encoder-decoder")
        c.arch = Architecture::EncoderDecoder;
    else if (arch == "decoder-only")
        c.arch = Architecture::DecoderOnly;
    else
        throw IoError("checkpoint: unknown architecture '" + arch + "'");
    c.enc_layers = j.at("L_enc").get<int>();
    c.dec_layers = j.at("L").get<int>();
    c.d_m = j.at("d_m").get<int>();
    c.h = j.at("h").get<int>();
    c.d_k = j.at("d_k").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.vocab = j.at("vocab").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

inline std::string serialize_checkpoint(const Model& model) {
    std::string out;
    out.append(kCheckpointMagic, 4);
    detail::put_u32_le(out, kCheckpointVersion);
    const std::string header = config_to_json(model.config).dump();
    detail::put_u32_le(out, static_cast<uint32_t>(header.size()));
    out += header;
    Model& mut = const_cast<Model&>(model);  // visitor only reads here
    detail::visit_tensors(mut, [&](Tensor& t, const std::string&) {
        for (double v : t.data()) detail::put_f64_le(out, v);
    });
    return out;
}

inline Model deserialize_checkpoint(const std::string& bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 12) throw TruncatedError("checkpoint: shorter than the fixed header");
    if (std::memcmp(p, kCheckpointMagic, 4) != 0) throw BadMagicError("checkpoint: bad magic bytes");
    const uint32_t version = detail::get_u32_le(p + 4);
    if (version != kCheckpointVersion)
        throw VersionError("checkpoint: unsupported version " + std::to_string(version));
    const uint32_t header_len = detail::get_u32_le(p + 8);
    if (bytes.size() < 12 + static_cast<size_t>(header_len))
        throw TruncatedError("checkpoint: truncated JSON header");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.substr(12, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint: bad JSON header: ") + e.what());
    }
    ModelConfig cfg = config_from_json(j);
    cfg.validate();

    // Shape skeleton from the config; payload overwrites every value.
    Model m = init_model(cfg);
    size_t off = 12 + header_len;
    detail::visit_tensors(m, [&](Tensor& t, const std::string& name) {
        const size_t need = static_cast<size_t>(t.size()) * 8;
        if (off + need > bytes.size())
            throw TruncatedError("checkpoint: truncated while reading tensor " + name);
        for (int64_t i = 0; i < t.size(); ++i)
            t.at(i) = detail::get_f64_le(reinterpret_cast<const unsigned char*>(bytes.data()) + off + static_cast<size_t>(i) * 8);
        off += need;
    });
    if (off != bytes.size())
        throw TensorShapeMismatchError("checkpoint: " + std::to_string(bytes.size() - off) +
                                       " trailing bytes do not match any tensor shape");
    return m;
}

inline void save_checkpoint(const Model& model, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    const std::string bytes = serialize_checkpoint(model);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline Model load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

// Closed-form parameter count for a config (documented in the README).
inline int64_t parameter_count(const ModelConfig& c) {
    const int64_t attn = 4LL * c.h * c.d_m * c.d_k + 3LL * c.h * c.d_k + c.d_m;
    const int64_t ln = 2LL * c.d_m;
    const int64_t ffn = 2LL * c.d_m * c.d_ff + c.d_ff + c.d_m;
    int64_t total = static_cast<int64_t>(c.vocab) * c.d_m + static_cast<int64_t>(c.max_positions) * c.d_m;
    if (c.arch == Architecture::EncoderDecoder) {
        total += c.enc_layers * (attn + 2 * ln + ffn) + ln;              // encoder + final LN
        total += c.dec_layers * (2 * attn + 3 * ln + ffn) + ln;          // decoder + final LN
    } else {
        total += c.dec_layers * (attn + 2 * ln + ffn) + ln;
    }
    return total;
}

}  // namespace elattn
