#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "elattn/model.hpp"

namespace elattn {

struct GenConfig {
    int beam = 1;
    int max_out_len = 32;
    int min_out_len = 1;
    double length_penalty = 0.0;  // alpha
    int no_repeat_ngram = 0;      // 0 = off
    int diverse_groups = 1;
    double diverse_strength = 0.0;  // lambda

    void validate() const {
        if (beam < 1) throw ParamError("GenConfig: beam must be >= 1");
        if (max_out_len < 1) throw ParamError("GenConfig: max_out_len must be >= 1");
        if (min_out_len < 0 || min_out_len > max_out_len)
            throw ParamError("GenConfig: min_out_len must be in [0, max_out_len]");
        if (length_penalty < 0.0) throw ParamError("GenConfig: length penalty must be >= 0");
        if (no_repeat_ngram < 0) throw ParamError("GenConfig: no_repeat_ngram must be >= 0");
        if (diverse_groups < 1) throw ParamError("GenConfig: diverse_groups must be >= 1");
        if (diverse_groups > 1 && beam % diverse_groups != 0)
            throw ParamError("GenConfig: beam must be divisible by diverse_groups");
        if (diverse_strength < 0.0) throw ParamError("GenConfig: diverse_strength must be >= 0");
    }
};

struct Hypothesis {
    std::vector<int> tokens;  // generated tokens, eos included when emitted
    double logprob_sum = 0.0;
    bool finished = false;
    double score = 0.0;
};

// score = logprob_sum / length^alpha
inline double length_penalty_score(double logprob_sum, int64_t length, double alpha) {
    if (length < 1) throw ParamError("length_penalty_score: length must be >= 1");
    return logprob_sum / std::pow(static_cast<double>(length), alpha);
}

// Bans any token that would complete an n-gram already present in
// `history` by setting its logit to -inf.
inline Tensor apply_no_repeat_ngram(const Tensor& logits, const std::vector<int>& history, int n) {
    if (n <= 0) return logits;
    const int64_t len = static_cast<int64_t>(history.size());
    if (len < n - 1 || len == 0) return logits;
    Tensor out = logits;
    const double neg_inf = -std::numeric_limits<double>::infinity();
    if (n == 1) {
        for (int tok : history)
            if (tok >= 0 && tok < out.size()) out.at(tok) = neg_inf;
        return out;
    }
    // The current (n-1)-token tail; any historical n-gram with that
    // prefix bans its final token.
    for (int64_t start = 0; start + n <= len; ++start) {
        bool match = true;
        for (int j = 0; j < n - 1; ++j)
            if (history[static_cast<size_t>(start + j)] != history[static_cast<size_t>(len - (n - 1) + j)]) {
                match = false;
                break;
            }
        if (match) {
            const int banned = history[static_cast<size_t>(start + n - 1)];
            if (banned >= 0 && banned < out.size()) out.at(banned) = neg_inf;
        }
    }
    return out;
}

namespace detail {

inline Tensor log_softmax(const Tensor& logits) {
    Tensor out = logits;
    double mx = out.at(0);
    for (int64_t i = 1; i < out.size(); ++i) mx = std::max(mx, out.at(i));
    double sum = 0.0;
    for (int64_t i = 0; i < out.size(); ++i) sum += std::exp(out.at(i) - mx);
    const double lse = mx + std::log(sum);
    for (int64_t i = 0; i < out.size(); ++i) out.at(i) = out.at(i) - lse;
    return out;
}

// Log-probabilities with the search-time bans applied: eos suppressed
// before min_out_len, repeated n-grams suppressed. Bans are applied
// after normalization (the usual seq2seq-toolkit convention), so kept entries retain
// their unmodified log-probabilities.
inline Tensor step_lprobs(const Tensor& logits, const std::vector<int>& history,
                          const GenConfig& cfg) {
    Tensor lp = log_softmax(logits);
    lp = apply_no_repeat_ngram(lp, history, cfg.no_repeat_ngram);
    if (static_cast<int>(history.size()) + 1 < cfg.min_out_len)
        lp.at(kEosId) = -std::numeric_limits<double>::infinity();
    return lp;
}

}  // namespace detail

// A live search session: hypotheses, their cache lanes, and the
// finished pool. Lane i of `state` always backs `live[i]`.
struct BeamState {
    DecoderState state;
    std::vector<Hypothesis> live;
    std::vector<Hypothesis> finished;
};

// Permutes the live hypotheses and their cache lanes together. EL-mode
// shared hidden tensors are untouched; only per-lane caches move.
inline void reorder_cache(BeamState& bs, const std::vector<int>& perm) {
    bs.state.permute_lanes(perm);
    if (bs.live.size() == perm.size()) {
        std::vector<Hypothesis> next;
        next.reserve(perm.size());
        for (int p : perm) next.push_back(bs.live[static_cast<size_t>(p)]);
        bs.live = std::move(next);
    }
}

// Drops lanes whose hypotheses are finished or dead. Shared EL tensors
// stay; per-lane KV rows for dropped lanes are freed.
inline void prune_finished(BeamState& bs, const std::vector<bool>& keep) {
    bs.state.keep_lanes(keep);
    if (bs.live.size() == keep.size()) {
        std::vector<Hypothesis> next;
        for (size_t i = 0; i < keep.size(); ++i)
            if (keep[i]) next.push_back(std::move(bs.live[i]));
        bs.live = std::move(next);
    }
}

namespace detail {

// Starts a generation session and returns the logits the first
// generated token is sampled from. Every lane carries the same state.
inline BeamState start_session(const Model& m, const std::vector<int>& input, AttentionMode mode,
                               int beams) {
    if (input.empty()) throw InputError("generation input must be non-empty");
    BeamState bs;
    if (m.config.arch == Architecture::EncoderDecoder) {
        Tensor enc = encode(m, input);
        bs.state = init_decoder_state(m, enc, mode, beams);
        for (int lane = 0; lane < beams; ++lane) decoder_step(m, bs.state, lane, kBosId);
    } else {
        bs.state = init_decoder_state(m, input, mode, beams);
    }
    bs.live.assign(static_cast<size_t>(beams), Hypothesis{});
    return bs;
}

struct Candidate {
    int parent;  // live-hypothesis index
    int token;
    double lp_sum;
};

inline bool candidate_better(const Candidate& a, const Candidate& b) {
    if (a.lp_sum != b.lp_sum) return a.lp_sum > b.lp_sum;
    if (a.token != b.token) return a.token < b.token;
    return a.parent < b.parent;
}

inline void pool_add(std::vector<Hypothesis>& pool, Hypothesis hyp, size_t cap) {
    pool.push_back(std::move(hyp));
    std::sort(pool.begin(), pool.end(), [](const Hypothesis& a, const Hypothesis& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.tokens < b.tokens;
    });
    if (pool.size() > cap) pool.resize(cap);
}

// Most favorable reachable score for a live hypothesis: logprob can only
// decrease, and length^alpha grows, so finishing at max_out_len bounds it.
inline double best_reachable(const Hypothesis& h, const GenConfig& cfg) {
    return length_penalty_score(h.logprob_sum, cfg.max_out_len, cfg.length_penalty);
}

}  // namespace detail

inline std::vector<Hypothesis> beam_search(const Model& m, const std::vector<int>& input,
                                           const GenConfig& cfg_in, AttentionMode mode) {
    GenConfig cfg = cfg_in;
    cfg.validate();
    const int beam = cfg.beam;
    BeamState bs = detail::start_session(m, input, mode, beam);
    std::vector<Hypothesis> pool;

    for (int step = 0; step < cfg.max_out_len && !bs.live.empty(); ++step) {
        const bool last_step = (step + 1 == cfg.max_out_len);
        std::vector<detail::Candidate> cands;
        // All lanes are identical before the first expansion; using more
        // than one root would just duplicate every candidate beam times.
        const size_t roots = (step == 0) ? 1 : bs.live.size();
        for (size_t i = 0; i < roots; ++i) {
            const Hypothesis& h = bs.live[i];
            Tensor lp = detail::step_lprobs(bs.state.lanes[i].last_logits, h.tokens, cfg);
            for (int tok = 0; tok < lp.size(); ++tok) {
                const double v = lp.at(tok);
                if (!std::isfinite(v)) continue;
                cands.push_back({static_cast<int>(i), tok, h.logprob_sum + v});
            }
        }
        std::sort(cands.begin(), cands.end(), detail::candidate_better);

        std::vector<detail::Candidate> next_live;
        for (size_t r = 0; r < cands.size(); ++r) {
            const detail::Candidate& c = cands[r];
            const bool in_top_beam = r < static_cast<size_t>(beam);
            const bool ends = (c.token == kEosId) || last_step;
            if (ends) {
                // Top-k finalization: a hypothesis only finishes when its
                // eos candidate ranks inside the top beam slots. This is
                // what makes beam=1 coincide with the argmax rollout.
                if (!in_top_beam) continue;
                Hypothesis done = bs.live[static_cast<size_t>(c.parent)];
                done.tokens.push_back(c.token);
                done.logprob_sum = c.lp_sum;
                done.finished = true;
                done.score = length_penalty_score(c.lp_sum,
                                                  static_cast<int64_t>(done.tokens.size()),
                                                  cfg.length_penalty);
                detail::pool_add(pool, std::move(done), static_cast<size_t>(beam));
            } else if (static_cast<int>(next_live.size()) < beam) {
                next_live.push_back(c);
            }
        }
        if (last_step || next_live.empty()) break;

        // Termination: nothing live can beat the settled pool.
        if (static_cast<int>(pool.size()) >= beam) {
            double best_live = -std::numeric_limits<double>::infinity();
            for (const detail::Candidate& c : next_live) {
                Hypothesis probe;
                probe.logprob_sum = c.lp_sum;
                best_live = std::max(best_live, detail::best_reachable(probe, cfg));
            }
            if (pool.back().score >= best_live) break;
        }

        // Gather survivor parents into the new lane layout, then advance
        // each lane with its chosen token.
        std::vector<int> parents;
        std::vector<Hypothesis> next_hyps;
        for (const detail::Candidate& c : next_live) {
            parents.push_back(c.parent);
            Hypothesis h = bs.live[static_cast<size_t>(c.parent)];
            h.tokens.push_back(c.token);
            h.logprob_sum = c.lp_sum;
            next_hyps.push_back(std::move(h));
        }
        bs.state.gather_lanes(parents);
        bs.live = std::move(next_hyps);
        for (size_t i = 0; i < bs.live.size(); ++i)
            decoder_step(m, bs.state, static_cast<int>(i), bs.live[i].tokens.back());
    }
    if (pool.empty()) throw StateError("beam_search: no finished hypothesis");
    return pool;
}

inline Hypothesis greedy_search(const Model& m, const std::vector<int>& input,
                                const GenConfig& cfg_in, AttentionMode mode) {
    GenConfig cfg = cfg_in;
    cfg.beam = 1;
    cfg.diverse_groups = 1;
    return beam_search(m, input, cfg, mode).front();
}

// Group-wise beam search with Hamming diversity: group g's logits are
// penalized by lambda for every earlier group that picked the same
// token at this step.
inline std::vector<Hypothesis> diverse_beam_search(const Model& m, const std::vector<int>& input,
                                                   const GenConfig& cfg_in, AttentionMode mode) {
    GenConfig cfg = cfg_in;
    cfg.validate();
    const int G = cfg.diverse_groups;
    if (G == 1) return beam_search(m, input, cfg, mode);
    const int gs = cfg.beam / G;  // group beam size

    BeamState bs = detail::start_session(m, input, mode, cfg.beam);
    // group g owns lanes [g*gs, (g+1)*gs); live[i] empty marker via alive flags
    std::vector<std::vector<int>> group_live(static_cast<size_t>(G));  // lane indices
    for (int g = 0; g < G; ++g) group_live[static_cast<size_t>(g)] = {g * gs};  // one root each
    std::vector<std::vector<Hypothesis>> pools(static_cast<size_t>(G));
    std::vector<bool> group_done(static_cast<size_t>(G), false);

    // Hypotheses tracked per lane.
    std::vector<Hypothesis> hyp(static_cast<size_t>(cfg.beam));

    for (int step = 0; step < cfg.max_out_len; ++step) {
        const bool last_step = (step + 1 == cfg.max_out_len);
        std::vector<int> step_token_counts(static_cast<size_t>(m.config.vocab), 0);
        // New lane layout assembled across groups, then applied at once.
        std::vector<int> perm;
        std::vector<int> feed_tokens;
        std::vector<Hypothesis> new_hyp;
        std::vector<std::vector<int>> new_group_live(static_cast<size_t>(G));
        bool any_live = false;

        for (int g = 0; g < G; ++g) {
            if (group_done[static_cast<size_t>(g)]) continue;
            std::vector<detail::Candidate> cands;
            for (int lane : group_live[static_cast<size_t>(g)]) {
                const Hypothesis& h = hyp[static_cast<size_t>(lane)];
                Tensor lp = detail::step_lprobs(bs.state.lanes[static_cast<size_t>(lane)].last_logits,
                                                h.tokens, cfg);
                for (int tok = 0; tok < lp.size(); ++tok) {
                    double v = lp.at(tok);
                    if (!std::isfinite(v)) continue;
                    v -= cfg.diverse_strength * step_token_counts[static_cast<size_t>(tok)];
                    cands.push_back({lane, tok, h.logprob_sum + v});
                }
            }
            std::sort(cands.begin(), cands.end(), detail::candidate_better);

            std::vector<detail::Candidate> survivors;
            for (size_t r = 0; r < cands.size(); ++r) {
                const detail::Candidate& c = cands[r];
                const bool ends = (c.token == kEosId) || last_step;
                if (ends) {
                    if (r >= static_cast<size_t>(gs)) continue;  // top-k finalization
                    Hypothesis done = hyp[static_cast<size_t>(c.parent)];
                    done.tokens.push_back(c.token);
                    done.logprob_sum = c.lp_sum;
                    done.finished = true;
                    done.score = length_penalty_score(c.lp_sum,
                                                      static_cast<int64_t>(done.tokens.size()),
                                                      cfg.length_penalty);
                    detail::pool_add(pools[static_cast<size_t>(g)], std::move(done),
                                     static_cast<size_t>(gs));
                } else if (static_cast<int>(survivors.size()) < gs) {
                    survivors.push_back(c);
                }
            }
            // Group termination mirrors plain beam search.
            bool done_now = last_step || survivors.empty();
            if (!done_now && static_cast<int>(pools[static_cast<size_t>(g)].size()) >= gs) {
                double best_live = -std::numeric_limits<double>::infinity();
                for (const detail::Candidate& c : survivors) {
                    Hypothesis probe;
                    probe.logprob_sum = c.lp_sum;
                    best_live = std::max(best_live, detail::best_reachable(probe, cfg));
                }
                if (pools[static_cast<size_t>(g)].back().score >= best_live) done_now = true;
            }
            if (done_now) {
                group_done[static_cast<size_t>(g)] = true;
                continue;
            }
            for (const detail::Candidate& c : survivors) {
                const int new_lane = static_cast<int>(perm.size());
                perm.push_back(c.parent);
                feed_tokens.push_back(c.token);
                Hypothesis h = hyp[static_cast<size_t>(c.parent)];
                h.tokens.push_back(c.token);
                h.logprob_sum = c.lp_sum;
                new_hyp.push_back(std::move(h));
                new_group_live[static_cast<size_t>(g)].push_back(new_lane);
                ++step_token_counts[static_cast<size_t>(c.token)];
            }
            any_live = true;
        }
        if (!any_live) break;

        bs.state.gather_lanes(perm);
        hyp = std::move(new_hyp);
        group_live = new_group_live;
        for (size_t i = 0; i < hyp.size(); ++i)
            decoder_step(m, bs.state, static_cast<int>(i), feed_tokens[i]);
    }

    std::vector<Hypothesis> all;
    for (auto& p : pools) all.insert(all.end(), p.begin(), p.end());
    if (all.empty()) throw StateError("diverse_beam_search: no finished hypothesis");
    std::sort(all.begin(), all.end(), [](const Hypothesis& a, const Hypothesis& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.tokens < b.tokens;
    });
    return all;
}

}  // namespace elattn
