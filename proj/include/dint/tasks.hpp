#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dint/model.hpp"
#include "dint/rng.hpp"

namespace dint::task {

// Synthetic retrieval vocabulary: filler words, city names, digits, and the
// four structural markers used by needle and query phrases.
constexpr int kFillerBase = 0;
constexpr int kFillerCount = 64;
constexpr int kCityBase = 64;
constexpr int kCityCount = 16;
constexpr int kDigitBase = 80;
constexpr int kDigitCount = 10;
constexpr int kAssign = 90;
constexpr int kQuery = 91;
constexpr int kAnswer = 92;
constexpr int kSep = 93;
constexpr int kVocabSize = 96;

constexpr size_t kNeedleLen = 6;  // SEP city ASSIGN d1 d2 d3
constexpr size_t kRoundLen = 7;   // SEP QUERY city ANS d1 d2 d3

struct NeedleParams {
    size_t ctx_len = 256;   // haystack region length, in tokens
    size_t n_needles = 4;   // facts hidden in the haystack
    size_t r_queries = 2;   // query rounds appended after the haystack
    double depth = 0.0;     // fractional position of the first queried fact
    uint64_t seed = 1;
};

struct Needle {
    size_t pos;     // start of the 6-token phrase inside the haystack
    int city;       // token id
    int digits[3];  // token ids
};

struct QueryRound {
    size_t start;   // index of the round's SEP in the full token stream
    size_t needle;  // which needle it asks about
};

struct NeedleSample {
    std::vector<int> tokens;  // ctx_len haystack + r_queries * kRoundLen
    size_t ctx_len = 0;
    std::vector<Needle> needles;  // needles[0] sits at the requested depth
    std::vector<QueryRound> rounds;

    size_t answer_pos(const QueryRound& r, int k) const { return r.start + 4 + k; }
    const Needle& target(const QueryRound& r) const { return needles[r.needle]; }
};

// Deterministic in (params, rng state). Throws CapacityError when the
// requested needles cannot be placed without overlap.
NeedleSample generate_needle(const NeedleParams& p, Rng& rng);

// Per-position repeated-context flags: flags[i] is 1 when i >= n and the
// n-gram tokens[i-n..i) already occurs starting strictly before i-n.
std::vector<uint8_t> ar_hit_flags(const std::vector<int>& tokens, size_t n);

// Mean next-token loss split by whether the target's preceding n-gram was
// already seen. nll[t] is the loss of predicting tokens[t+1]. Positions with
// fewer than n context tokens are excluded from every slice, so the two
// subclasses partition the valid class exactly.
struct LossSlices {
    double valid = 0, ar_hit = 0, others = 0;  // per-class mean losses
    size_t n_valid = 0, n_ar_hit = 0, n_others = 0;
};
LossSlices slice_loss(const std::vector<double>& nll, const std::vector<uint8_t>& flags,
                      size_t n);

// Evaluation corpora for the loss-slicing study.
std::vector<int> random_corpus(size_t len, int vocab, Rng& rng);
// Every n-gram unique, so the repeated-context class is empty by construction.
std::vector<int> zero_repeat_corpus(size_t len, int vocab, size_t n, Rng& rng);

// Loss weights over target rows (length tokens-1): answer digits weigh 1,
// everything else weighs background.
std::vector<double> answer_weights(const NeedleSample& s, double background);

// Greedy-decodes each query round's three digits (feeding predictions back)
// and returns the fraction of rounds answered exactly.
template <typename T>
double score_retrieval(const Model<T>& m, const NeedleSample& s) {
    if (s.rounds.empty()) throw std::invalid_argument("score_retrieval: sample has no rounds");
    size_t hits = 0;
    for (const auto& r : s.rounds) {
        std::vector<int> prefix(s.tokens.begin(),
                                s.tokens.begin() + static_cast<long>(r.start + 4));
        bool ok = true;
        for (int k = 0; k < 3; ++k) {
            auto logits = m.forward(nullptr, prefix);
            size_t row = logits.extent(0) - 1, v = logits.extent(1);
            size_t best = 0;
            for (size_t j = 1; j < v; ++j)
                if (logits.at(row, j) > logits.at(row, best)) best = j;
            ok = ok && best == static_cast<size_t>(s.target(r).digits[k]);
            prefix.push_back(static_cast<int>(best));
        }
        if (ok) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(s.rounds.size());
}

}  // namespace dint::task
