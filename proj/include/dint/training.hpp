#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dint/analysis.hpp"
#include "dint/model.hpp"
#include "dint/tasks.hpp"

namespace dint {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.1;
};

// Linear warmup to the peak, then cosine decay to floor_frac * peak. Step
// numbers are 1-based; at(0) is 0 so a logged step-0 loss carries no update.
struct LrSchedule {
    double peak = 1e-3;
    size_t warmup = 100;
    size_t total = 1000;
    double floor_frac = 0.1;

    double at(size_t step) const {
        if (step == 0) return 0.0;
        if (step <= warmup)
            return peak * static_cast<double>(step) / static_cast<double>(warmup);
        if (step >= total) return peak * floor_frac;
        double t = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
        double lo = peak * floor_frac;
        return lo + (peak - lo) * 0.5 * (1.0 + std::cos(3.141592653589793 * t));
    }
};

// Global gradient-norm clip. Returns the pre-clip norm; throws when the norm
// is not finite, since continuing would poison the optimizer state.
template <typename T>
double clip_grad_norm(std::vector<std::pair<std::string, Tensor<T>>> params, double max_norm) {
    double sq = 0;
    for (const auto& [name, p] : params) {
        if (!p.has_grad()) continue;
        for (T gv : p.grad_view()) sq += static_cast<double>(gv) * static_cast<double>(gv);
    }
    double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
    if (norm > max_norm && norm > 0) {
        double s = max_norm / norm;
        for (auto& [name, p] : params) {
            if (!p.has_grad()) continue;
            for (auto& gv : p.grad()) gv = static_cast<T>(static_cast<double>(gv) * s);
        }
    }
    return norm;
}

// Decoupled weight decay: p -= lr * (mhat / (sqrt(vhat) + eps) + wd * p).
// Moments are kept in double regardless of the parameter type.
template <typename T>
class AdamW {
  public:
    AdamW(std::vector<std::pair<std::string, Tensor<T>>> params, AdamWConfig cfg)
        : cfg_(cfg) {
        for (auto& [name, p] : params) {
            Slot s;
            s.p = p;
            s.m.assign(p.numel(), 0.0);
            s.v.assign(p.numel(), 0.0);
            slots_.push_back(std::move(s));
        }
    }

    size_t steps_done() const { return t_; }

    void step(double lr) {
        ++t_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& s : slots_) {
            s.p.ensure_grad();
            auto& data = s.p.data();
            const auto& grad = s.p.grad_view();
            for (size_t i = 0; i < data.size(); ++i) {
                double g = static_cast<double>(grad[i]);
                s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
                s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
                double mhat = s.m[i] / bc1;
                double vhat = s.v[i] / bc2;
                double p = static_cast<double>(data[i]);
                p -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p);
                data[i] = static_cast<T>(p);
            }
        }
    }

  private:
    struct Slot {
        Tensor<T> p;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    AdamWConfig cfg_;
    size_t t_ = 0;
};

struct TrainConfig {
    size_t steps = 1200;
    size_t batch = 8;
    double clip = 1.0;
    double background_weight = 0.1;  // loss weight off the answer spans
    size_t report_every = 25;
    uint64_t data_seed = 123;
    AdamWConfig adamw;
    LrSchedule schedule;
    task::NeedleParams task;  // depth is redrawn uniformly per sample
};

struct TrainRow {
    size_t step;
    double loss, ar_hit_loss, others_loss, lr, grad_norm, row_sum_max_dev;
};

struct TrainReport {
    std::vector<TrainRow> rows;
    double final_loss = 0;

    void write_csv(const std::string& path, const std::string& comment) const {
        std::vector<std::vector<std::string>> out;
        for (const auto& r : rows)
            out.push_back({std::to_string(r.step), fmt_g(r.loss), fmt_g(r.ar_hit_loss),
                           fmt_g(r.others_loss), fmt_g(r.lr), fmt_g(r.grad_norm),
                           fmt_g(r.row_sum_max_dev)});
        dint::write_csv(path, comment,
                        {"step", "loss", "ar_hit_loss", "others_loss", "lr", "grad_norm",
                         "row_sum_max_dev"},
                        out);
    }
};

// Trains a model on the retrieval task with answer-weighted next-token loss.
// Samples are drawn fresh per step from the data_seed stream; each sample's
// insertion depth is uniform so evaluation at any depth is in-distribution.
template <typename T>
TrainReport train_needle(Model<T>& m, const TrainConfig& tc) {
    if (tc.batch == 0 || tc.steps == 0)
        throw ConfigError("train: steps and batch must be positive");
    auto params = m.params();
    AdamW<T> opt(params, tc.adamw);
    Rng data_rng = Rng(tc.data_seed).fork(fnv1a("train_data"));
    TrainReport report;

    for (size_t step = 1; step <= tc.steps; ++step) {
        m.zero_grads();
        double batch_loss = 0;
        double hit_sum = 0, other_sum = 0;
        size_t hit_n = 0, other_n = 0;
        double row_dev = 0;
        bool log = step % tc.report_every == 0 || step == 1 || step == tc.steps;

        for (size_t b = 0; b < tc.batch; ++b) {
            task::NeedleParams p = tc.task;
            p.depth = data_rng.uniform();
            task::NeedleSample sample = task::generate_needle(p, data_rng);
            std::vector<int> input(sample.tokens.begin(), sample.tokens.end() - 1);
            std::vector<int> targets(sample.tokens.begin() + 1, sample.tokens.end());
            std::vector<double> weights = task::answer_weights(sample, tc.background_weight);

            Graph<T> g;
            std::vector<AttnDiag<T>> diags;
            auto logits = m.forward(&g, input, log && b == 0 ? &diags : nullptr);
            std::vector<double> nll;
            auto loss = cross_entropy(&g, logits, targets, &weights, &nll);
            batch_loss += static_cast<double>(loss.at(0));
            g.backward(scale(&g, loss, 1.0 / static_cast<double>(tc.batch)));

            if (log) {
                auto flags = task::ar_hit_flags(sample.tokens, 2);
                auto slices = task::slice_loss(nll, flags, 2);
                hit_sum += slices.ar_hit * static_cast<double>(slices.n_ar_hit);
                hit_n += slices.n_ar_hit;
                other_sum += slices.others * static_cast<double>(slices.n_others);
                other_n += slices.n_others;
                if (b == 0) row_dev = audit_row_sums(m, diags);
            }
        }

        double lr = tc.schedule.at(step);
        double gnorm = clip_grad_norm(params, tc.clip);
        opt.step(lr);

        batch_loss /= static_cast<double>(tc.batch);
        if (!std::isfinite(batch_loss))
            throw NumericError("training loss is not finite at step " + std::to_string(step));
        report.final_loss = batch_loss;
        if (log)
            report.rows.push_back({step, batch_loss, hit_n ? hit_sum / hit_n : 0,
                                   other_n ? other_sum / other_n : 0, lr, gnorm, row_dev});
    }
    return report;
}

}  // namespace dint
