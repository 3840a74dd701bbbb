#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dint/model.hpp"
#include "dint/tasks.hpp"

namespace dint {

// Stable float formatting for CSV output; reports must be byte-identical
// across runs of the same build.
inline std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline void write_csv(const std::string& path, const std::string& comment,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("csv: cannot open '" + path + "' for writing");
    if (!comment.empty()) os << "# " << comment << "\n";
    for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << "\n";
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
        os << "\n";
    }
    if (!os) throw std::runtime_error("csv: short write to '" + path + "'");
}

// What each attention row should sum to, given the layer's current weights:
// 1 for vanilla, 1 - lambda for the two-map difference, 1 - lambda + gamma
// once the importance term is added (exactly 1 when gamma is tied to lambda).
template <typename T>
double expected_row_sum(const MultiHeadAttention<T>& a) {
    switch (a.cfg.arch) {
        case Arch::vanilla: return 1.0;
        case Arch::diff: return 1.0 - a.lambda_value();
        case Arch::dint: return 1.0 - a.lambda_value() + a.gamma_value();
    }
    return 1.0;
}

// Max |row sum - expected| over every layer, head, and row of a forward
// pass's final attention maps.
template <typename T>
double audit_row_sums(const Model<T>& m, const std::vector<AttnDiag<T>>& diags) {
    double worst = 0;
    for (size_t l = 0; l < diags.size(); ++l) {
        double want = expected_row_sum(m.layer_stack[l].attn);
        for (const auto& hd : diags[l].heads) {
            const auto& a = hd.a_final;
            for (size_t i = 0; i < a.extent(0); ++i) {
                double s = 0;
                for (size_t j = 0; j < a.extent(1); ++j) s += static_cast<double>(a.at(i, j));
                worst = std::max(worst, std::abs(s - want));
            }
        }
    }
    return worst;
}

// Attention mass the answering rows place on the queried fact versus the
// rest of the haystack. Signed sums are comparable across architectures
// whose rows sum to one; the absolute shares show where magnitude goes even
// when entries are negative.
struct SpanMass {
    double answer = 0;  // mean signed mass on the fact's six tokens
    double noise = 0;   // mean signed mass on the remaining haystack
    double answer_abs_share = 0;
    double noise_abs_share = 0;
};

// Scores one captured layer. Rows are the three that produce the answer
// digits of round 0 (the answer marker's row and the first two digits');
// spans come from the sample's own bookkeeping, never from heuristics.
template <typename T>
SpanMass allocation_from_diag(const AttnDiag<T>& diag, const task::NeedleSample& s) {
    const auto& round = s.rounds.at(0);
    const auto& fact = s.target(round);
    std::vector<size_t> rows = {round.start + 3, round.start + 4, round.start + 5};

    SpanMass out;
    double abs_total = 0, abs_answer = 0, abs_noise = 0;
    size_t terms = 0;
    for (const auto& hd : diag.heads) {
        const auto& a = hd.a_final;
        for (size_t r : rows) {
            if (r >= a.extent(0))
                throw std::invalid_argument("allocation_from_diag: row " + std::to_string(r) +
                                            " not in captured map of " +
                                            std::to_string(a.extent(0)) + " rows");
            for (size_t j = 0; j < a.extent(1); ++j) {
                double v = static_cast<double>(a.at(r, j));
                bool in_answer = j >= fact.pos && j < fact.pos + task::kNeedleLen;
                bool in_haystack = j < s.ctx_len;
                if (in_answer) {
                    out.answer += v;
                    abs_answer += std::abs(v);
                } else if (in_haystack) {
                    out.noise += v;
                    abs_noise += std::abs(v);
                }
                abs_total += std::abs(v);
            }
            ++terms;
        }
    }
    out.answer /= static_cast<double>(terms);
    out.noise /= static_cast<double>(terms);
    out.answer_abs_share = abs_total > 0 ? abs_answer / abs_total : 0;
    out.noise_abs_share = abs_total > 0 ? abs_noise / abs_total : 0;
    return out;
}

// Convenience wrapper: forward up to (not including) round 0's final digit,
// so the maps match what a scoring forward would see, then score one layer.
template <typename T>
SpanMass attention_allocation(const Model<T>& m, const task::NeedleSample& s,
                              size_t layer = static_cast<size_t>(-1)) {
    if (m.cfg.layers == 0) throw std::invalid_argument("attention_allocation: model has no layers");
    if (layer == static_cast<size_t>(-1)) layer = m.cfg.layers - 1;
    if (layer >= m.cfg.layers)
        throw std::invalid_argument("attention_allocation: layer " + std::to_string(layer) +
                                    " out of range for " + std::to_string(m.cfg.layers));
    const auto& round = s.rounds.at(0);
    std::vector<int> input(s.tokens.begin(),
                           s.tokens.begin() + static_cast<long>(round.start + 6));
    std::vector<AttnDiag<T>> diags;
    m.forward(nullptr, input, &diags);
    return allocation_from_diag(diags[layer], s);
}

// The canonical insertion depths every retrieval sweep reports.
inline const std::vector<double>& standard_depths() {
    static const std::vector<double> d{0.0, 0.25, 0.5, 0.75, 1.0};
    return d;
}

// Retrieval accuracy over a (needle count, query count, haystack length,
// depth) grid, averaging score_retrieval over fresh samples per cell. The
// sample stream is keyed by the cell coordinates alone, so two models
// evaluated with the same seed see identical samples.
struct GridCell {
    size_t n_needles, r_queries, ctx_len;
    double depth;
    double accuracy;
    size_t samples;
};

inline Rng cell_rng(uint64_t seed, size_t n, size_t r, size_t ctx, double depth) {
    return Rng(seed)
        .fork(fnv1a("grid"))
        .fork(n)
        .fork(r)
        .fork(ctx)
        .fork(static_cast<uint64_t>(std::llround(depth * 1e6)));
}

template <typename T>
std::vector<GridCell> accuracy_grid(const Model<T>& m, const std::vector<size_t>& needle_counts,
                                    const std::vector<size_t>& query_counts,
                                    const std::vector<size_t>& ctx_lens,
                                    const std::vector<double>& depths, size_t samples,
                                    uint64_t seed) {
    std::vector<GridCell> grid;
    for (size_t n : needle_counts) {
        for (size_t r : query_counts) {
            for (size_t ctx : ctx_lens) {
                for (double depth : depths) {
                    Rng rng = cell_rng(seed, n, r, ctx, depth);
                    double acc = 0;
                    for (size_t i = 0; i < samples; ++i) {
                        task::NeedleParams p;
                        p.ctx_len = ctx;
                        p.n_needles = n;
                        p.r_queries = r;
                        p.depth = depth;
                        acc += task::score_retrieval(m, task::generate_needle(p, rng));
                    }
                    grid.push_back({n, r, ctx, depth, acc / static_cast<double>(samples),
                                    samples});
                }
            }
        }
    }
    return grid;
}

inline void write_grid_csv(const std::string& path, const std::string& comment,
                           const std::vector<std::pair<std::string, std::vector<GridCell>>>& grids) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [model, grid] : grids)
        for (const auto& c : grid)
            rows.push_back({model, std::to_string(c.n_needles), std::to_string(c.r_queries),
                            std::to_string(c.ctx_len), fmt_g(c.depth), fmt_g(c.accuracy),
                            std::to_string(c.samples)});
    write_csv(path, comment,
              {"model", "n_needles", "r_queries", "ctx_len", "depth", "accuracy", "samples"},
              rows);
}

// Binary matrix dump plus a small text index. Layout mirrors the checkpoint
// conventions: magic, version, count, then per matrix name/rank/extents/f32.
template <typename T>
void dump_matrices(const std::string& path_prefix,
                   const std::vector<std::pair<std::string, Tensor<T>>>& mats,
                   const std::string& comment) {
    std::string b;
    b.append("DINTMATS", 8);
    auto put_u32 = [&](uint32_t v) {
        for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    auto put_u64 = [&](uint64_t v) {
        for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    put_u32(1);
    put_u64(mats.size());
    std::string index;
    if (!comment.empty()) index += "# " + comment + "\n";
    for (const auto& [name, t] : mats) {
        index += name + " " + shape_str(t.shape()) + " offset=" + std::to_string(b.size()) + "\n";
        put_u64(name.size());
        b += name;
        put_u32(static_cast<uint32_t>(t.rank()));
        for (size_t e : t.shape()) put_u64(e);
        for (size_t i = 0; i < t.numel(); ++i) {
            float f = static_cast<float>(t.at(i));
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(bits);
        }
    }
    std::ofstream os(path_prefix + ".mats", std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("dump_matrices: cannot open '" + path_prefix + ".mats'");
    os.write(b.data(), static_cast<std::streamsize>(b.size()));
    std::ofstream ix(path_prefix + ".index.txt", std::ios::trunc);
    if (!ix) throw std::runtime_error("dump_matrices: cannot open '" + path_prefix + ".index.txt'");
    ix << index;
}

}  // namespace dint
