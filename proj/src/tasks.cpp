#include "dint/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace dint::task {

namespace {

// n distinct values from [0, pool), order randomized.
std::vector<int> sample_distinct(size_t n, int pool, Rng& rng) {
    std::vector<int> all(pool);
    for (int i = 0; i < pool; ++i) all[i] = i;
    for (size_t i = 0; i < n; ++i)
        std::swap(all[i], all[i + rng.below(static_cast<uint64_t>(pool) - i)]);
    all.resize(n);
    return all;
}

}  // namespace

NeedleSample generate_needle(const NeedleParams& p, Rng& rng) {
    if (p.n_needles == 0 || p.n_needles > static_cast<size_t>(kCityCount))
        throw ConfigError("needle: n_needles must be in [1, " + std::to_string(kCityCount) +
                          "], got " + std::to_string(p.n_needles));
    if (p.r_queries == 0 || p.r_queries > p.n_needles)
        throw ConfigError("needle: r_queries must be in [1, n_needles], got " +
                          std::to_string(p.r_queries));
    if (p.depth < 0.0 || p.depth > 1.0)
        throw ConfigError("needle: depth must be in [0, 1], got " + std::to_string(p.depth));
    if (p.ctx_len < p.n_needles * kNeedleLen)
        throw CapacityError("needle: " + std::to_string(p.n_needles) + " needles need at least " +
                            std::to_string(p.n_needles * kNeedleLen) + " tokens, haystack is " +
                            std::to_string(p.ctx_len));

    NeedleSample s;
    s.ctx_len = p.ctx_len;

    std::vector<int> cities = sample_distinct(p.n_needles, kCityCount, rng);
    std::set<int> numbers_used;
    std::vector<size_t> starts;

    auto overlaps = [&](size_t a) {
        for (size_t b : starts)
            if (a < b + kNeedleLen && b < a + kNeedleLen) return true;
        return false;
    };

    size_t span = p.ctx_len - kNeedleLen;  // inclusive range of valid starts
    for (size_t i = 0; i < p.n_needles; ++i) {
        Needle n;
        n.city = kCityBase + cities[i];
        int number;
        do {
            number = static_cast<int>(rng.below(1000));
        } while (!numbers_used.insert(number).second);
        n.digits[0] = kDigitBase + number / 100;
        n.digits[1] = kDigitBase + number / 10 % 10;
        n.digits[2] = kDigitBase + number % 10;
        if (i == 0) {
            n.pos = static_cast<size_t>(std::llround(p.depth * static_cast<double>(span)));
        } else {
            size_t tries = 0;
            do {
                if (++tries > 1000)
                    throw CapacityError("needle: cannot place needle " + std::to_string(i) +
                                        " without overlap in haystack of " +
                                        std::to_string(p.ctx_len));
                n.pos = rng.below(span + 1);
            } while (overlaps(n.pos));
        }
        starts.push_back(n.pos);
        s.needles.push_back(n);
    }

    s.tokens.resize(p.ctx_len);
    for (auto& t : s.tokens) t = kFillerBase + static_cast<int>(rng.below(kFillerCount));
    for (const auto& n : s.needles) {
        s.tokens[n.pos] = kSep;
        s.tokens[n.pos + 1] = n.city;
        s.tokens[n.pos + 2] = kAssign;
        for (int k = 0; k < 3; ++k) s.tokens[n.pos + 3 + k] = n.digits[k];
    }

    // Round 0 asks about the depth-placed needle; later rounds ask about
    // distinct others, in randomized order.
    std::vector<size_t> order{0};
    if (p.r_queries > 1) {
        std::vector<int> rest = sample_distinct(p.r_queries - 1,
                                                static_cast<int>(p.n_needles) - 1, rng);
        for (int r : rest) order.push_back(static_cast<size_t>(r) + 1);
    }
    for (size_t q : order) {
        QueryRound r;
        r.start = s.tokens.size();
        r.needle = q;
        const Needle& n = s.needles[q];
        s.tokens.push_back(kSep);
        s.tokens.push_back(kQuery);
        s.tokens.push_back(n.city);
        s.tokens.push_back(kAnswer);
        for (int k = 0; k < 3; ++k) s.tokens.push_back(n.digits[k]);
        s.rounds.push_back(r);
    }
    return s;
}

std::vector<uint8_t> ar_hit_flags(const std::vector<int>& tokens, size_t n) {
    if (n == 0) throw std::invalid_argument("ar_hit_flags: n must be positive");
    std::vector<uint8_t> flags(tokens.size(), 0);
    if (tokens.size() < n) return flags;
    std::map<std::vector<int>, size_t> first_start;
    for (size_t start = 0; start + n <= tokens.size(); ++start) {
        std::vector<int> gram(tokens.begin() + static_cast<long>(start),
                              tokens.begin() + static_cast<long>(start + n));
        first_start.emplace(std::move(gram), start);  // keeps the earliest
    }
    for (size_t i = n; i < tokens.size(); ++i) {
        std::vector<int> gram(tokens.begin() + static_cast<long>(i - n),
                              tokens.begin() + static_cast<long>(i));
        flags[i] = first_start.at(gram) < i - n ? 1 : 0;
    }
    return flags;
}

LossSlices slice_loss(const std::vector<double>& nll, const std::vector<uint8_t>& flags,
                      size_t n) {
    if (n == 0) throw std::invalid_argument("slice_loss: n must be positive");
    if (nll.size() + 1 != flags.size())
        throw std::invalid_argument("slice_loss: " + std::to_string(nll.size()) +
                                    " losses do not pair with " + std::to_string(flags.size()) +
                                    " tokens");
    LossSlices out;
    double sum_valid = 0, sum_hit = 0, sum_other = 0;
    for (size_t t = 0; t < nll.size(); ++t) {
        size_t i = t + 1;
        if (i < n) continue;
        ++out.n_valid;
        sum_valid += nll[t];
        if (flags[i]) {
            ++out.n_ar_hit;
            sum_hit += nll[t];
        } else {
            ++out.n_others;
            sum_other += nll[t];
        }
    }
    out.valid = out.n_valid ? sum_valid / static_cast<double>(out.n_valid) : 0;
    out.ar_hit = out.n_ar_hit ? sum_hit / static_cast<double>(out.n_ar_hit) : 0;
    out.others = out.n_others ? sum_other / static_cast<double>(out.n_others) : 0;
    return out;
}

std::vector<int> random_corpus(size_t len, int vocab, Rng& rng) {
    std::vector<int> out(len);
    for (auto& t : out) t = static_cast<int>(rng.below(static_cast<uint64_t>(vocab)));
    return out;
}

std::vector<int> zero_repeat_corpus(size_t len, int vocab, size_t n, Rng& rng) {
    if (n == 0) throw std::invalid_argument("zero_repeat_corpus: n must be positive");
    std::vector<int> out;
    out.reserve(len);
    std::set<std::vector<int>> seen;
    for (size_t i = 0; i < len; ++i) {
        if (i + 1 < n) {
            out.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(vocab))));
            continue;
        }
        std::vector<int> allowed;
        for (int t = 0; t < vocab; ++t) {
            std::vector<int> gram(out.end() - static_cast<long>(n - 1), out.end());
            gram.push_back(t);
            if (!seen.count(gram)) allowed.push_back(t);
        }
        if (allowed.empty())
            throw CapacityError("zero_repeat_corpus: no unused " + std::to_string(n) +
                                "-gram continuation at position " + std::to_string(i));
        int t = allowed[rng.below(allowed.size())];
        std::vector<int> gram(out.end() - static_cast<long>(n - 1), out.end());
        gram.push_back(t);
        seen.insert(std::move(gram));
        out.push_back(t);
    }
    return out;
}

std::vector<double> answer_weights(const NeedleSample& s, double background) {
    if (background < 0)
        throw std::invalid_argument("answer_weights: background must be non-negative");
    std::vector<double> w(s.tokens.size() - 1, background);
    for (const auto& r : s.rounds)
        for (int k = 0; k < 3; ++k) w[s.answer_pos(r, k) - 1] = 1.0;
    return w;
}

}  // namespace dint::task
