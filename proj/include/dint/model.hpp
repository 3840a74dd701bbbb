#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dint/attention.hpp"

namespace dint {

// Feed-forward width: ceil(8/3 * d_model), rounded up to a multiple of 8.
inline size_t ffn_width(size_t d_model) {
    size_t w = (8 * d_model + 2) / 3;  // ceil(8 d / 3)
    return (w + 7) / 8 * 8;
}

struct ModelConfig {
    Arch arch = Arch::dint;
    size_t layers = 2;
    size_t d_model = 64;
    size_t d = 8;
    size_t heads = 4;
    size_t vocab_size = 96;
    size_t max_seq_len = 512;
    bool lambda_schedule = true;     // per-layer depth schedule for lambda_init
    double lambda_init_fixed = 0.8;  // used when the schedule is off
    bool tie_gamma = true;
    bool headwise_norm = true;
    GMode g_mode = GMode::causal_prefix;
    bool tie_embeddings = true;
    bool use_rope = true;
    uint64_t seed = 1;

    double lambda_init_at(size_t layer_1based) const {
        return lambda_schedule ? lambda_init_for_layer(layer_1based) : lambda_init_fixed;
    }

    AttentionConfig attention_at(size_t layer_1based) const {
        AttentionConfig a;
        a.arch = arch;
        a.d_model = d_model;
        a.d = d;
        a.heads = heads;
        a.lambda_init = lambda_init_at(layer_1based);
        a.tie_gamma = tie_gamma;
        a.headwise_norm = headwise_norm;
        a.g_mode = g_mode;
        a.use_rope = use_rope;
        a.causal = true;
        return a;
    }

    void validate() const {
        if (vocab_size == 0) throw ConfigError("model: vocab_size must be positive");
        if (max_seq_len == 0) throw ConfigError("model: max_seq_len must be positive");
        attention_at(1).validate();
    }

    // Canonical key = value form, one key per line, fixed order. This is the
    // exact text embedded in checkpoints, so formatting must stay stable.
    std::string to_text() const {
        std::ostringstream os;
        os << "arch = " << arch_name(arch) << "\n";
        os << "layers = " << layers << "\n";
        os << "d_model = " << d_model << "\n";
        os << "d = " << d << "\n";
        os << "heads = " << heads << "\n";
        os << "vocab_size = " << vocab_size << "\n";
        os << "max_seq_len = " << max_seq_len << "\n";
        if (lambda_schedule) {
            os << "lambda_init = schedule\n";
        } else {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", lambda_init_fixed);
            os << "lambda_init = " << buf << "\n";
        }
        os << "tie_gamma = " << (tie_gamma ? "true" : "false") << "\n";
        os << "headwise_norm = " << (headwise_norm ? "true" : "false") << "\n";
        os << "g_mode = " << g_mode_name(g_mode) << "\n";
        os << "tie_embeddings = " << (tie_embeddings ? "true" : "false") << "\n";
        os << "use_rope = " << (use_rope ? "true" : "false") << "\n";
        os << "seed = " << seed << "\n";
        return os.str();
    }

    static ModelConfig from_text(const std::string& text) {
        std::map<std::string, std::string> kv;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            auto eq = line.find(" = ");
            if (eq == std::string::npos)
                throw ConfigError("config: malformed line '" + line + "'");
            kv[line.substr(0, eq)] = line.substr(eq + 3);
        }
        auto take = [&](const char* key) {
            auto it = kv.find(key);
            if (it == kv.end()) throw ConfigError(std::string("config: missing key '") + key + "'");
            std::string v = it->second;
            kv.erase(it);
            return v;
        };
        auto to_bool = [](const std::string& v, const char* key) {
            if (v == "true") return true;
            if (v == "false") return false;
            throw ConfigError(std::string("config: key '") + key + "' expects true/false, got '" +
                              v + "'");
        };
        ModelConfig c;
        c.arch = arch_from_string(take("arch"));
        c.layers = std::stoull(take("layers"));
        c.d_model = std::stoull(take("d_model"));
        c.d = std::stoull(take("d"));
        c.heads = std::stoull(take("heads"));
        c.vocab_size = std::stoull(take("vocab_size"));
        c.max_seq_len = std::stoull(take("max_seq_len"));
        std::string li = take("lambda_init");
        if (li == "schedule") {
            c.lambda_schedule = true;
        } else {
            c.lambda_schedule = false;
            c.lambda_init_fixed = std::stod(li);
        }
        c.tie_gamma = to_bool(take("tie_gamma"), "tie_gamma");
        c.headwise_norm = to_bool(take("headwise_norm"), "headwise_norm");
        c.g_mode = g_mode_from_string(take("g_mode"));
        c.tie_embeddings = to_bool(take("tie_embeddings"), "tie_embeddings");
        c.use_rope = to_bool(take("use_rope"), "use_rope");
        c.seed = std::stoull(take("seed"));
        if (!kv.empty())
            throw ConfigError("config: unknown key '" + kv.begin()->first + "'");
        c.validate();
        return c;
    }
};

// Large-scale reference settings, kept for documentation and consistency
// checks; desk runs use far smaller models.
inline ModelConfig reference_large_config() {
    ModelConfig c;
    c.arch = Arch::dint;
    c.layers = 28;
    c.d_model = 3072;
    c.d = 128;
    c.heads = 12;
    c.vocab_size = 100288;
    c.max_seq_len = 4096;
    return c;
}

template <typename T>
struct TransformerLayer {
    MultiHeadAttention<T> attn;
    Tensor<T> norm1_gain, norm2_gain;  // [d_model]
    Tensor<T> w_gate, w_up;            // [d_model, f]
    Tensor<T> w_down;                  // [f, d_model]

    static TransformerLayer init(const ModelConfig& cfg, size_t layer_1based, Rng& master) {
        TransformerLayer l;
        std::string p = "layers." + std::to_string(layer_1based - 1);
        l.attn = MultiHeadAttention<T>::init(cfg.attention_at(layer_1based), master, p + ".attn");
        l.norm1_gain = init_const<T>({cfg.d_model}, 1.0);
        l.norm2_gain = init_const<T>({cfg.d_model}, 1.0);
        size_t f = ffn_width(cfg.d_model);
        double s_in = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
        double s_out = 1.0 / std::sqrt(static_cast<double>(f));
        l.w_gate = init_trunc_normal<T>(master, p + ".ffn.w_gate", {cfg.d_model, f}, s_in);
        l.w_up = init_trunc_normal<T>(master, p + ".ffn.w_up", {cfg.d_model, f}, s_in);
        l.w_down = init_trunc_normal<T>(master, p + ".ffn.w_down", {f, cfg.d_model}, s_out);
        return l;
    }

    void collect_params(const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor<T>>>& out) const {
        out.emplace_back(prefix + ".norm1", norm1_gain);
        attn.collect_params(prefix + ".attn", out);
        out.emplace_back(prefix + ".norm2", norm2_gain);
        out.emplace_back(prefix + ".ffn.w_gate", w_gate);
        out.emplace_back(prefix + ".ffn.w_up", w_up);
        out.emplace_back(prefix + ".ffn.w_down", w_down);
    }

    Tensor<T> forward(Graph<T>* g, const Tensor<T>& x, const Mask* mask,
                      AttnDiag<T>* diag = nullptr) const {
        auto y = add(g, attn.forward(g, rmsnorm(g, x, norm1_gain), mask, diag), x);
        auto h = rmsnorm(g, y, norm2_gain);
        auto up = mul(g, swish(g, matmul(g, h, w_gate)), matmul(g, h, w_up));
        return add(g, matmul(g, up, w_down), y);
    }
};

// Decoder-only language model: token embedding, pre-norm residual layers,
// final RMS norm, vocabulary head (tied to the embedding by default).
template <typename T>
struct Model {
    ModelConfig cfg;
    Tensor<T> embedding;  // [vocab, d_model]
    std::vector<TransformerLayer<T>> layer_stack;
    Tensor<T> final_norm_gain;  // [d_model]; absent when layers == 0
    Tensor<T> head;             // [vocab, d_model]; only when embeddings untied

    static Model init(const ModelConfig& cfg) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        Rng master(cfg.seed);
        double stddev = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
        m.embedding = init_trunc_normal<T>(master, "embedding",
                                           {cfg.vocab_size, cfg.d_model}, stddev);
        for (size_t l = 1; l <= cfg.layers; ++l)
            m.layer_stack.push_back(TransformerLayer<T>::init(cfg, l, master));
        if (cfg.layers >= 1) m.final_norm_gain = init_const<T>({cfg.d_model}, 1.0);
        if (!cfg.tie_embeddings)
            m.head = init_trunc_normal<T>(master, "head", {cfg.vocab_size, cfg.d_model}, stddev);
        return m;
    }

    std::vector<std::pair<std::string, Tensor<T>>> params() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        out.emplace_back("embedding", embedding);
        for (size_t l = 0; l < layer_stack.size(); ++l)
            layer_stack[l].collect_params("layers." + std::to_string(l), out);
        if (cfg.layers >= 1) out.emplace_back("final_norm", final_norm_gain);
        if (!cfg.tie_embeddings) out.emplace_back("head", head);
        return out;
    }

    size_t param_count() const {
        size_t n = 0;
        for (const auto& [name, t] : params()) n += t.numel();
        return n;
    }

    void zero_grads() const {
        for (auto& [name, t] : params()) t.zero_grad();
    }

    // Logits for every position: [len(tokens), vocab]. diags, when given,
    // receives one attention snapshot per layer.
    Tensor<T> forward(Graph<T>* g, const std::vector<int>& tokens,
                      std::vector<AttnDiag<T>>* diags = nullptr) const {
        if (tokens.empty()) throw std::invalid_argument("model: empty token sequence");
        if (tokens.size() > cfg.max_seq_len)
            throw std::invalid_argument("model: sequence of " + std::to_string(tokens.size()) +
                                        " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
        auto x = embed(g, embedding, tokens);
        Mask mask = Mask::causal(tokens.size());
        if (diags) diags->assign(cfg.layers, AttnDiag<T>{});
        for (size_t l = 0; l < layer_stack.size(); ++l)
            x = layer_stack[l].forward(g, x, &mask, diags ? &(*diags)[l] : nullptr);
        if (cfg.layers >= 1) x = rmsnorm(g, x, final_norm_gain);
        return matmul_nt(g, x, cfg.tie_embeddings ? embedding : head);
    }
};

}  // namespace dint
