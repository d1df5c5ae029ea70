// elattn command-line interface.
//
// Subcommands:
//   check     numerical equivalence suite (attention-level + end-to-end)
//   generate  run a search strategy and print hypotheses
//   mem       input-state cache sizes (multi-head vs EL) over a (batch, n) grid
//   bench     sweep + measure + roofline prediction
//
// Exit codes: 0 success, 1 check failure, 2 usage error, 3 I/O error.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "elattn/elattn.hpp"

using namespace elattn;

namespace {

struct GlobalOpts {
    uint64_t seed = 1;
    std::string format = "csv";
    std::string precision = "f64";
    std::string out_path;
};

void emit(const GlobalOpts& g, const std::string& text) {
    if (g.out_path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(g.out_path);
    if (!f) throw IoError("cannot open for writing: " + g.out_path);
    f << text;
    if (!f) throw IoError("write failed: " + g.out_path);
}

AttentionMode parse_mode(const std::string& s) {
    if (s == "el") return AttentionMode::El;
    if (s == "mha-cached") return AttentionMode::MhaCached;
    if (s == "mha-nocache") return AttentionMode::MhaNoCache;
    throw ParamError("unknown mode '" + s + "' (expected el, mha-cached, or mha-nocache)");
}

// Inline model flags shared by generate and bench.
struct ModelOpts {
    std::string checkpoint;
    ModelConfig config;
    std::string arch = "encoder-decoder";

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--model", checkpoint, "load a checkpoint instead of an inline config");
        cmd->add_option("--arch", arch, "encoder-decoder | decoder-only");
        cmd->add_option("--enc-layers", config.enc_layers, "encoder layers");
        cmd->add_option("--layers", config.dec_layers, "decoder layers");
        cmd->add_option("--d-model", config.d_m, "model dimension");
        cmd->add_option("--heads", config.h, "attention heads");
        cmd->add_option("--d-k", config.d_k, "per-head dimension");
        cmd->add_option("--d-ff", config.d_ff, "feed-forward width");
        cmd->add_option("--vocab", config.vocab, "vocabulary size");
        cmd->add_option("--max-positions", config.max_positions, "position table size");
    }

    Model build(uint64_t seed) const {
        if (!checkpoint.empty()) return load_checkpoint(checkpoint);
        ModelConfig c = config;
        c.seed = seed;
        if (arch == "decoder-only") {
            c.arch = Architecture::DecoderOnly;
            c.enc_layers = 0;
        } else if (arch != "encoder-decoder") {
            throw ParamError("unknown architecture '" + arch + "'");
        }
        return init_model(c);
    }
};

std::vector<std::vector<int>> read_token_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open input file: " + path);
    std::vector<std::vector<int>> sequences;
    std::string line;
    while (std::getline(f, line)) {
        std::istringstream is(line);
        std::vector<int> seq;
        int tok;
        while (is >> tok) seq.push_back(tok);
        if (!is.eof()) throw InputError("malformed token file line: '" + line + "'");
        if (!seq.empty()) sequences.push_back(std::move(seq));
    }
    if (sequences.empty()) throw InputError("input file holds no token sequences: " + path);
    return sequences;
}

std::vector<int> parse_ids(const std::string& text) {
    std::istringstream is(text);
    std::vector<int> seq;
    int tok;
    while (is >> tok) seq.push_back(tok);
    if (!is.eof() || seq.empty()) throw InputError("malformed token list: '" + text + "'");
    return seq;
}

// ---- check ---------------------------------------------------------------

int cmd_check(const GlobalOpts& g, int cases, bool perturb) {
    const double tol = 1e-10;
    std::ostringstream os;
    double worst = 0.0;
    uint64_t worst_seed = 0;
    const int hs[] = {1, 2, 4, 8};
    const int dms[] = {8, 16, 32, 64, 128};
    const int64_t ns[] = {1, 2, 7, 33, 64};
    for (int i = 0; i < cases; ++i) {
        const uint64_t seed = g.seed + static_cast<uint64_t>(i);
        Rng rng(seed);
        const int h = hs[i % 4];
        const int d_m = dms[(i / 4) % 5];
        const int d_k = (i / 20) % 2 == 0 ? std::max(1, d_m / h) : 3;
        const int64_t n = ns[(i / 40) % 5];
        AttentionParams p = AttentionParams::random(h, d_m, d_k, rng);
        Tensor q = seeded_uniform({1, d_m}, rng, -1, 1);
        Tensor H = seeded_uniform({n, d_m}, rng, -1, 1);
        Tensor mha = multi_head_attention(q, H, p);
        const double d = max_abs_diff(el_attention(q, H, p), mha);
        if (d > worst) {
            worst = d;
            worst_seed = seed;
        }
    }
    if (perturb) {
        // Negative-control hook: desynchronize one weight between the two
        // paths on a dedicated case and demand the check notices.
        Rng rng(g.seed);
        AttentionParams p = AttentionParams::random(2, 16, 8, rng);
        Tensor q = seeded_uniform({1, 16}, rng, -1, 1);
        Tensor H = seeded_uniform({33, 16}, rng, -1, 1);
        Tensor mha = multi_head_attention(q, H, p);
        p.Wk[0].at(0, 0) += 1e-3;
        const double d = max_abs_diff(el_attention(q, H, p), mha);
        if (d > worst) {
            worst = d;
            worst_seed = g.seed;
        }
    }
    os << "attention-level: " << cases << " cases, max |el - mha| = " << worst
       << " (tolerance " << tol << ")\n";
    bool ok = worst <= tol;
    if (!ok) os << "FAILING CASE SEED: " << worst_seed << "\n";

    // End-to-end token identity on the default desk-scale model.
    ModelConfig mc;
    mc.seed = g.seed;
    Model m = init_model(mc);
    Rng rng(g.seed ^ 0x5EEDULL);
    int mismatches = 0;
    const int e2e_runs = 10;
    for (int i = 0; i < e2e_runs; ++i) {
        std::vector<int> input = {kBosId};
        for (int t = 0; t < 5; ++t)
            input.push_back(3 + static_cast<int>(rng.next_u64() % 98));
        input.push_back(kEosId);
        GenConfig cfg;
        cfg.beam = i % 2 == 0 ? 1 : 4;
        cfg.max_out_len = 8;
        auto tokens = [&](AttentionMode mode) {
            std::vector<std::vector<int>> out;
            for (const Hypothesis& h : beam_search(m, input, cfg, mode)) out.push_back(h.tokens);
            return out;
        };
        auto cached = tokens(AttentionMode::MhaCached);
        if (cached != tokens(AttentionMode::El) || cached != tokens(AttentionMode::MhaNoCache))
            ++mismatches;
    }
    os << "end-to-end: " << e2e_runs << " generations, " << mismatches
       << " cross-mode token mismatches\n";
    if (mismatches > 0) ok = false;
    os << (ok ? "check passed\n" : "check FAILED\n");
    emit(g, os.str());
    return ok ? 0 : 1;
}

// ---- generate ------------------------------------------------------------

int cmd_generate(const GlobalOpts& g, const ModelOpts& mo, const GenConfig& cfg, bool greedy,
                 const std::string& mode_name, const std::string& input_ids,
                 const std::string& input_file) {
    Model m = mo.build(g.seed);
    const AttentionMode mode = parse_mode(mode_name);
    std::vector<std::vector<int>> inputs;
    if (!input_file.empty())
        inputs = read_token_file(input_file);
    else if (!input_ids.empty())
        inputs.push_back(parse_ids(input_ids));
    else
        throw ParamError("generate: provide --input or --input-file");

    std::ostringstream os;
    for (size_t s = 0; s < inputs.size(); ++s) {
        std::vector<Hypothesis> hyps;
        if (greedy || (cfg.beam == 1 && cfg.diverse_groups == 1))
            hyps = {greedy_search(m, inputs[s], cfg, mode)};
        else if (cfg.diverse_groups > 1)
            hyps = diverse_beam_search(m, inputs[s], cfg, mode);
        else
            hyps = beam_search(m, inputs[s], cfg, mode);
        os << "# sequence " << s << " (mode " << to_string(mode) << ")\n";
        os << "rank\tscore\tlogprob\ttokens\n";
        for (size_t i = 0; i < hyps.size(); ++i) {
            os << i << "\t" << hyps[i].score << "\t" << hyps[i].logprob_sum << "\t";
            for (size_t t = 0; t < hyps[i].tokens.size(); ++t)
                os << (t ? " " : "") << hyps[i].tokens[t];
            os << "\n";
        }
    }
    emit(g, os.str());
    return 0;
}

// ---- mem -----------------------------------------------------------------

int cmd_mem(const GlobalOpts& g, int L, int d_m, int x, int bpv,
            const std::vector<int64_t>& batches, const std::vector<int64_t>& lengths) {
    const double gib = 1024.0 * 1024.0 * 1024.0;
    std::ostringstream os;
    const ReportFormat fmt = parse_report_format(g.format);
    if (fmt == ReportFormat::Json) {
        os << "[\n";
        bool first = true;
        for (int64_t B : batches)
            for (int64_t n : lengths) {
                WorkloadSpec s;
                s.n = n, s.d_m = d_m, s.x = x, s.B = B, s.L = L, s.bytes_per_value = bpv;
                CacheBytes c = cache_bytes(s);
                os << (first ? "" : ",\n") << "  {\"batch\": " << B << ", \"n\": " << n
                   << ", \"mha_gib\": " << c.mha_bytes / gib << ", \"el_gib\": " << c.el_bytes / gib
                   << ", \"ratio\": " << c.ratio() << "}";
                first = false;
            }
        os << "\n]\n";
    } else {
        const bool md = fmt == ReportFormat::Markdown;
        if (md) {
            os << "| batch | n | mha_gib | el_gib | ratio |\n";
            os << "|-------|---|---------|--------|-------|\n";
        } else {
            os << "batch,n,mha_gib,el_gib,ratio\n";
        }
        for (int64_t B : batches)
            for (int64_t n : lengths) {
                WorkloadSpec s;
                s.n = n, s.d_m = d_m, s.x = x, s.B = B, s.L = L, s.bytes_per_value = bpv;
                CacheBytes c = cache_bytes(s);
                if (md)
                    os << "| " << B << " | " << n << " | " << c.mha_bytes / gib << " | "
                       << c.el_bytes / gib << " | " << c.ratio() << " |\n";
                else
                    os << B << "," << n << "," << c.mha_bytes / gib << "," << c.el_bytes / gib
                       << "," << c.ratio() << "\n";
            }
    }
    emit(g, os.str());
    return 0;
}

// ---- bench ---------------------------------------------------------------

int cmd_bench(const GlobalOpts& g, const ModelOpts& mo, const std::vector<int64_t>& sweep_n,
              const std::vector<int>& sweep_beam, const std::string& modes_arg, double peak_gflops,
              double peak_gbs, int repeats, int max_out_len) {
    Model m = mo.build(g.seed);
    std::vector<AttentionMode> modes;
    if (modes_arg == "all") {
        modes = {AttentionMode::MhaNoCache, AttentionMode::MhaCached, AttentionMode::El};
    } else {
        std::istringstream is(modes_arg);
        std::string item;
        while (std::getline(is, item, ',')) modes.push_back(parse_mode(item));
    }
    BenchReport rep = sweep(m, sweep_n, sweep_beam, modes, {peak_gflops, peak_gbs}, repeats,
                            max_out_len);
    emit(g, render(rep, parse_report_format(g.format)));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EL-attention inference engine"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "master seed");
    app.add_option("--format", g.format, "csv | md | json")
        ->check(CLI::IsMember({"csv", "md", "json"}));
    app.add_option("--precision", g.precision, "f32 | f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    app.add_option("--out", g.out_path, "write output to a file instead of stdout");

    // check
    CLI::App* check = app.add_subcommand("check", "numerical equivalence suite");
    check->fallthrough();
    int cases = 200;
    bool perturb = false;
    check->add_option("--cases", cases, "number of random attention configurations")
        ->check(CLI::PositiveNumber);
    check->add_flag("--inject-perturbation", perturb)->group("");  // hidden negative control

    // generate
    CLI::App* gen = app.add_subcommand("generate", "run a search strategy");
    gen->fallthrough();
    ModelOpts gen_model;
    gen_model.add_flags(gen);
    GenConfig gen_cfg;
    bool greedy = false;
    std::string mode_name = "el", input_ids, input_file;
    gen->add_flag("--greedy", greedy, "greedy decoding (beam 1)");
    gen->add_option("--beam", gen_cfg.beam, "beam size");
    gen->add_option("--length-penalty", gen_cfg.length_penalty, "length penalty alpha");
    gen->add_option("--min-len", gen_cfg.min_out_len, "minimum output length");
    gen->add_option("--max-len", gen_cfg.max_out_len, "maximum output length");
    gen->add_option("--no-repeat-ngram", gen_cfg.no_repeat_ngram, "ban repeated n-grams");
    gen->add_option("--diverse-groups", gen_cfg.diverse_groups, "diverse beam groups");
    gen->add_option("--diverse-strength", gen_cfg.diverse_strength, "diverse beam strength lambda");
    gen->add_option("--mode", mode_name, "el | mha-cached | mha-nocache");
    gen->add_option("--input", input_ids, "input token ids, whitespace separated");
    gen->add_option("--input-file", input_file, "token file: one sequence per line");

    // mem
    CLI::App* mem = app.add_subcommand("mem", "cache-size table (multi-head vs EL)");
    mem->fallthrough();
    int mem_L = 12, mem_dm = 1024, mem_x = 4, mem_bpv = 2;
    std::vector<int64_t> mem_batches = {32, 64, 320};
    std::vector<int64_t> mem_lengths = {256, 1024};
    mem->add_option("--layers", mem_L, "decoder layers L");
    mem->add_option("--d-model", mem_dm, "model dimension");
    mem->add_option("--beam", mem_x, "beam size x");
    mem->add_option("--bytes", mem_bpv, "bytes per value (2 = fp16, 4 = fp32, 8 = fp64)");
    mem->add_option("--batch", mem_batches, "batch sizes")->delimiter(',');
    mem->add_option("--n", mem_lengths, "input sequence lengths")->delimiter(',');

    // bench
    CLI::App* bench = app.add_subcommand("bench", "sweep + measurement + roofline");
    bench->fallthrough();
    ModelOpts bench_model;
    bench_model.config.max_positions = 2048;
    bench_model.add_flags(bench);
    std::vector<int64_t> sweep_n = {64, 128, 256};
    std::vector<int> sweep_beam = {1, 4};
    std::string modes_arg = "all";
    double peak_gflops = 10.0, peak_gbs = 25.0;
    int repeats = 3, bench_max_len = 8;
    bench->add_option("--sweep-n", sweep_n, "sequence lengths")->delimiter(',');
    bench->add_option("--sweep-beam", sweep_beam, "beam sizes")->delimiter(',');
    bench->add_option("--modes", modes_arg, "all or comma-separated mode names");
    bench->add_option("--peak-gflops", peak_gflops, "hardware peak GFLOP/s");
    bench->add_option("--peak-gbs", peak_gbs, "hardware peak GB/s");
    bench->add_option("--repeats", repeats, "timed repetitions per cell (median)");
    bench->add_option("--max-len", bench_max_len, "generation length per measurement");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        PrecisionGuard guard(g.precision == "f32" ? Precision::f32 : Precision::f64);
        if (*check) return cmd_check(g, cases, perturb);
        if (*gen)
            return cmd_generate(g, gen_model, gen_cfg, greedy, mode_name, input_ids, input_file);
        if (*mem) return cmd_mem(g, mem_L, mem_dm, mem_x, mem_bpv, mem_batches, mem_lengths);
        if (*bench)
            return cmd_bench(g, bench_model, sweep_n, sweep_beam, modes_arg, peak_gflops, peak_gbs,
                             repeats, bench_max_len);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
