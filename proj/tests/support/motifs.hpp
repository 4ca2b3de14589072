#pragma once

// Token-level planted-motif windows for encoder/scan unit tests.

#include <cstdint>
#include <random>
#include <vector>

#include "pdl/corpus.hpp"

namespace pdl::testing {

struct MotifCorpus {
    std::vector<corpus::Window> windows;
    std::vector<int> motif;  // per window
    std::size_t vocab_size = 0;
};

/// `n_motifs` motifs; each position of a motif-m window draws one of m's own 3 tokens,
/// with `noise` probability of substituting a random sensor token.
inline MotifCorpus motif_windows(std::size_t n_windows, std::size_t n_motifs, std::size_t length, double noise,
                                 std::uint64_t seed) {
    MotifCorpus c;
    const std::size_t tokens_per_motif = 3;
    c.vocab_size = 4 + n_motifs * tokens_per_motif;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> any_token(4, static_cast<int>(c.vocab_size) - 1);
    for (std::size_t i = 0; i < n_windows; ++i) {
        const int m = static_cast<int>(i % n_motifs);
        corpus::Window w;
        w.window_id = static_cast<WindowId>(i);
        w.start_event_index = i;
        w.end_event_index = i + length - 1;
        w.day_key = corpus::Day{std::chrono::year{2020}, std::chrono::month{1}, std::chrono::day{1}};
        for (std::size_t t = 0; t < length; ++t) {
            TokenId tok = static_cast<TokenId>(4 + m * tokens_per_motif + rng() % tokens_per_motif);
            if (u(rng) < noise) {
                tok = static_cast<TokenId>(any_token(rng));
            }
            w.token_ids.push_back(tok);
        }
        c.windows.push_back(std::move(w));
        c.motif.push_back(m);
    }
    return c;
}

}  // namespace pdl::testing
