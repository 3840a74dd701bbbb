#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dint/analysis.hpp"
#include "dint/checkpoint.hpp"
#include "dint/gradcheck.hpp"
#include "dint/manifest.hpp"
#include "dint/model.hpp"
#include "dint/tasks.hpp"
#include "dint/training.hpp"

// Exit codes: 0 success; 2 invalid usage/config (including unknown ablation
// variants and unreadable input files); 3 numeric failure (NaN/Inf); 4
// malformed checkpoint or dump; 5 gradient check tolerance breach; 1 anything
// else.

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr int kToolVersion = 1;

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw dint::ConfigError("cannot read file '" + path + "'");
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

dint::ModelConfig config_from_file_or_default(const std::string& path) {
    if (path.empty()) return dint::ModelConfig{};
    return dint::ModelConfig::from_text(read_file(path));
}

void prepare_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw dint::ConfigError("cannot create output directory '" + dir + "': " + ec.message());
}

json config_json(const dint::ModelConfig& cfg) {
    json j;
    std::istringstream is(cfg.to_text());
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find(" = ");
        if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return j;
}

// --------------------------------------------------------------------------
// train
// --------------------------------------------------------------------------
struct TrainArgs {
    std::string config_path, out_dir;
    std::string arch;  // empty = keep config's
    uint64_t seed = 1;
    dint::TrainConfig tc;
};

int cmd_train(const TrainArgs& a) {
    dint::ModelConfig cfg = config_from_file_or_default(a.config_path);
    if (!a.arch.empty()) cfg.arch = dint::arch_from_string(a.arch);
    cfg.seed = a.seed;
    cfg.validate();
    if (cfg.vocab_size < dint::task::kVocabSize)
        throw dint::ConfigError("train: vocab_size must be at least " +
                                std::to_string(dint::task::kVocabSize) +
                                " for the retrieval task");
    size_t need = a.tc.task.ctx_len + a.tc.task.r_queries * dint::task::kRoundLen;
    if (need > cfg.max_seq_len)
        throw dint::ConfigError("train: task needs sequences of " + std::to_string(need) +
                                ", max_seq_len is " + std::to_string(cfg.max_seq_len));

    dint::TrainConfig tc = a.tc;
    tc.data_seed = a.seed;
    tc.schedule.total = tc.steps;

    prepare_out_dir(a.out_dir);
    dint::Manifest man;
    man.j = {{"subcommand", "train"},
             {"tool_version", kToolVersion},
             {"config", config_json(cfg)},
             {"config_hash", dint::fnv1a(cfg.to_text())},
             {"seed", a.seed},
             {"out_dir", a.out_dir},
             {"steps", tc.steps},
             {"batch", tc.batch},
             {"peak_lr", tc.schedule.peak},
             {"warmup", tc.schedule.warmup},
             {"clip", tc.clip},
             {"background_weight", tc.background_weight},
             {"report_every", tc.report_every},
             {"task",
              {{"ctx_len", tc.task.ctx_len},
               {"n_needles", tc.task.n_needles},
               {"r_queries", tc.task.r_queries}}}};
    man.write(a.out_dir + "/manifest.json");

    auto t0 = std::chrono::steady_clock::now();
    auto model = dint::Model<float>::init(cfg);
    if (tc.steps == 0) {
        dint::save_checkpoint(model, man.comment() + "\n", a.out_dir + "/model.ckpt");
        return 0;
    }
    dint::TrainReport report = dint::train_needle(model, tc);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    report.write_csv(a.out_dir + "/train.csv", man.comment());
    dint::save_checkpoint(model, man.comment() + "\n", a.out_dir + "/model.ckpt");
    json summary = {{"manifest", man.hash_hex()},
                    {"final_loss", report.final_loss},
                    {"steps", tc.steps},
                    {"wall_seconds", secs}};
    std::ofstream(a.out_dir + "/summary.json") << summary.dump(2) << "\n";
    std::cout << "trained " << dint::arch_name(cfg.arch) << " for " << tc.steps
              << " steps, final loss " << dint::fmt_g(report.final_loss) << "\n";
    return 0;
}

// --------------------------------------------------------------------------
// needle
// --------------------------------------------------------------------------
struct NeedleArgs {
    std::vector<std::string> checkpoints;
    std::vector<size_t> needles{4};
    std::vector<size_t> queries{2};
    std::vector<size_t> ctx_lens{256};
    size_t samples = 50;
    uint64_t seed = 7;
    std::string out_dir;
};

int cmd_needle(const NeedleArgs& a) {
    prepare_out_dir(a.out_dir);
    dint::Manifest man;
    man.j = {{"subcommand", "needle"},    {"tool_version", kToolVersion},
             {"checkpoints", a.checkpoints}, {"needles", a.needles},
             {"queries", a.queries},      {"ctx_lens", a.ctx_lens},
             {"samples", a.samples},      {"seed", a.seed},
             {"out_dir", a.out_dir}};
    man.write(a.out_dir + "/manifest.json");

    std::vector<std::pair<std::string, std::vector<dint::GridCell>>> grids;
    for (const auto& path : a.checkpoints) {
        auto model = dint::load_checkpoint<float>(path);
        grids.emplace_back(fs::path(path).stem().string(),
                           dint::accuracy_grid(model, a.needles, a.queries, a.ctx_lens,
                                               dint::standard_depths(), a.samples, a.seed));
    }
    dint::write_grid_csv(a.out_dir + "/accuracy.csv", man.comment(), grids);
    std::cout << "wrote " << a.out_dir << "/accuracy.csv\n";
    return 0;
}

// --------------------------------------------------------------------------
// analyze
// --------------------------------------------------------------------------
struct AnalyzeArgs {
    std::string checkpoint, task_path, out_dir;
    bool capture = false;
    long layer = -1;  // -1 = final layer
};

struct TaskSpec {
    size_t ctx_len = 256, n_needles = 4, r_queries = 2, samples = 10;
    uint64_t seed = 7;
};

TaskSpec parse_task_spec(const std::string& text) {
    TaskSpec t;
    std::istringstream is(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find(" = ");
        if (eq == std::string::npos)
            throw dint::ConfigError("task spec line " + std::to_string(lineno) +
                                    ": malformed '" + line + "'");
        std::string key = line.substr(0, eq), val = line.substr(eq + 3);
        if (key == "ctx_len") t.ctx_len = std::stoull(val);
        else if (key == "n_needles") t.n_needles = std::stoull(val);
        else if (key == "r_queries") t.r_queries = std::stoull(val);
        else if (key == "samples") t.samples = std::stoull(val);
        else if (key == "seed") t.seed = std::stoull(val);
        else
            throw dint::ConfigError("task spec line " + std::to_string(lineno) +
                                    ": unknown key '" + key + "'");
    }
    return t;
}

int cmd_analyze(const AnalyzeArgs& a) {
    TaskSpec spec = a.task_path.empty() ? TaskSpec{} : parse_task_spec(read_file(a.task_path));
    prepare_out_dir(a.out_dir);
    dint::Manifest man;
    man.j = {{"subcommand", "analyze"},
             {"tool_version", kToolVersion},
             {"checkpoint", a.checkpoint},
             {"task",
              {{"ctx_len", spec.ctx_len},
               {"n_needles", spec.n_needles},
               {"r_queries", spec.r_queries},
               {"samples", spec.samples},
               {"seed", spec.seed}}},
             {"capture", a.capture},
             {"layer", a.layer},
             {"out_dir", a.out_dir}};
    man.write(a.out_dir + "/manifest.json");

    auto model = dint::load_checkpoint<float>(a.checkpoint);
    size_t layer = a.layer < 0 ? model.cfg.layers - 1 : static_cast<size_t>(a.layer);
    if (model.cfg.layers == 0) throw dint::ConfigError("analyze: checkpoint has no layers");
    if (layer >= model.cfg.layers)
        throw dint::ConfigError("analyze: layer " + std::to_string(layer) +
                                " out of range for " + std::to_string(model.cfg.layers));

    std::vector<std::vector<std::string>> score_rows, audit_rows;
    bool captured = false;
    for (double depth : dint::standard_depths()) {
        dint::Rng rng = dint::cell_rng(spec.seed, spec.n_needles, spec.r_queries, spec.ctx_len,
                                       depth);
        dint::SpanMass acc{};
        double max_dev = 0;
        for (size_t i = 0; i < spec.samples; ++i) {
            dint::task::NeedleParams p;
            p.ctx_len = spec.ctx_len;
            p.n_needles = spec.n_needles;
            p.r_queries = spec.r_queries;
            p.depth = depth;
            auto sample = dint::task::generate_needle(p, rng);
            std::vector<int> input(
                sample.tokens.begin(),
                sample.tokens.begin() + static_cast<long>(sample.rounds[0].start + 6));
            std::vector<dint::AttnDiag<float>> diags;
            model.forward(nullptr, input, &diags);
            auto sm = dint::allocation_from_diag(diags[layer], sample);
            acc.answer += sm.answer;
            acc.noise += sm.noise;
            acc.answer_abs_share += sm.answer_abs_share;
            acc.noise_abs_share += sm.noise_abs_share;
            max_dev = std::max(max_dev, dint::audit_row_sums(model, diags));
            if (a.capture && !captured) {
                std::vector<std::pair<std::string, dint::Tensor<float>>> mats;
                for (size_t l = 0; l < diags.size(); ++l) {
                    for (size_t h = 0; h < diags[l].heads.size(); ++h) {
                        std::string base =
                            "L" + std::to_string(l) + ".h" + std::to_string(h) + ".";
                        const auto& hd = diags[l].heads[h];
                        if (hd.a1.numel()) mats.emplace_back(base + "a1", hd.a1);
                        if (hd.a2.numel()) mats.emplace_back(base + "a2", hd.a2);
                        if (hd.gi.numel()) mats.emplace_back(base + "gi", hd.gi);
                        if (hd.a_final.numel()) mats.emplace_back(base + "a_final", hd.a_final);
                        if (hd.out.numel()) mats.emplace_back(base + "out", hd.out);
                    }
                }
                dint::dump_matrices(a.out_dir + "/maps", mats, man.comment());
                captured = true;
            }
        }
        double n = static_cast<double>(spec.samples);
        score_rows.push_back({dint::fmt_g(depth), dint::fmt_g(acc.answer / n),
                              dint::fmt_g(acc.noise / n), dint::fmt_g(acc.answer_abs_share / n),
                              dint::fmt_g(acc.noise_abs_share / n),
                              std::to_string(spec.samples)});
        audit_rows.push_back({dint::fmt_g(depth), dint::fmt_g(max_dev)});
    }
    dint::write_csv(a.out_dir + "/score.csv", man.comment(),
                    {"depth", "answer_signed", "noise_signed", "answer_abs_share",
                     "noise_abs_share", "samples"},
                    score_rows);
    dint::write_csv(a.out_dir + "/audit.csv", man.comment(), {"depth", "row_sum_max_dev"},
                    audit_rows);
    std::cout << "wrote " << a.out_dir << "/score.csv and audit.csv\n";
    return 0;
}

// --------------------------------------------------------------------------
// gradcheck
// --------------------------------------------------------------------------
struct GradcheckArgs {
    std::string config_path, out_dir, inject_fault;
    double tolerance = 1e-4;
    double eps = 1e-5;
    size_t probes = 50;
    uint64_t seed = 5;
};

int cmd_gradcheck(const GradcheckArgs& a) {
    dint::ModelConfig cfg = config_from_file_or_default(a.config_path);
    cfg.validate();
    if (!a.inject_fault.empty()) dint::testing::backward_fault_op() = a.inject_fault;

    auto entries = dint::standard_op_checks(a.seed, a.probes, a.eps);
    entries.push_back(dint::model_check(cfg, a.seed, a.probes, a.eps));

    std::vector<std::string> failing;
    std::printf("%-28s %12s %7s %s\n", "op", "max_rel_err", "probes", "status");
    for (const auto& e : entries) {
        bool ok = e.max_rel_err < a.tolerance;
        std::printf("%-28s %12.3e %7zu %s\n", e.name.c_str(), e.max_rel_err, e.probes,
                    ok ? "ok" : "FAIL");
        if (!ok) failing.push_back(e.name);
    }
    if (!a.out_dir.empty()) {
        prepare_out_dir(a.out_dir);
        dint::Manifest man;
        man.j = {{"subcommand", "gradcheck"}, {"tool_version", kToolVersion},
                 {"config", config_json(cfg)}, {"tolerance", a.tolerance},
                 {"eps", a.eps},              {"probes", a.probes},
                 {"seed", a.seed},            {"out_dir", a.out_dir}};
        man.write(a.out_dir + "/manifest.json");
        std::vector<std::vector<std::string>> rows;
        for (const auto& e : entries)
            rows.push_back({e.name, dint::fmt_g(e.max_rel_err), std::to_string(e.probes)});
        dint::write_csv(a.out_dir + "/gradcheck.csv", man.comment(),
                        {"op", "max_rel_err", "probes"}, rows);
    }
    if (!failing.empty()) {
        std::cerr << "gradient check failed for:";
        for (const auto& f : failing) std::cerr << " " << f;
        std::cerr << "\n";
        return 5;
    }
    return 0;
}

// --------------------------------------------------------------------------
// ablate
// --------------------------------------------------------------------------
struct AblateArgs {
    std::string config_path, out_dir;
    std::vector<std::string> variants{"dint", "dint-groupnorm", "dint-lambda0.8",
                                      "dint-lambda0.5"};
    uint64_t seed = 11;
    size_t steps = 200;
    size_t batch = 4;
    size_t eval_samples = 16;
};

dint::ModelConfig apply_variant(dint::ModelConfig cfg, const std::string& name) {
    if (name == "dint") {
        cfg.arch = dint::Arch::dint;
    } else if (name == "dint-groupnorm") {  // the variant WITHOUT head norms
        cfg.arch = dint::Arch::dint;
        cfg.headwise_norm = false;
    } else if (name == "dint-lambda0.8") {
        cfg.arch = dint::Arch::dint;
        cfg.lambda_schedule = false;
        cfg.lambda_init_fixed = 0.8;
    } else if (name == "dint-lambda0.5") {
        cfg.arch = dint::Arch::dint;
        cfg.lambda_schedule = false;
        cfg.lambda_init_fixed = 0.5;
    } else if (name == "diff") {
        cfg.arch = dint::Arch::diff;
    } else if (name == "vanilla") {
        cfg.arch = dint::Arch::vanilla;
    } else {
        throw dint::ConfigError("unknown ablation variant '" + name + "'");
    }
    return cfg;
}

int cmd_ablate(const AblateArgs& a) {
    dint::ModelConfig base = config_from_file_or_default(a.config_path);
    // Resolve every variant before any training so a typo fails fast.
    std::vector<std::pair<std::string, dint::ModelConfig>> runs;
    for (const auto& v : a.variants) runs.emplace_back(v, apply_variant(base, v));

    prepare_out_dir(a.out_dir);
    dint::Manifest man;
    man.j = {{"subcommand", "ablate"},     {"tool_version", kToolVersion},
             {"config", config_json(base)}, {"variants", a.variants},
             {"seed", a.seed},             {"steps", a.steps},
             {"batch", a.batch},           {"eval_samples", a.eval_samples},
             {"out_dir", a.out_dir}};
    man.write(a.out_dir + "/manifest.json");

    dint::TrainConfig tc;
    tc.steps = a.steps;
    tc.batch = a.batch;
    tc.data_seed = a.seed;  // shared data stream across variants
    tc.schedule.total = a.steps;
    tc.schedule.warmup = std::max<size_t>(1, a.steps / 10);
    tc.task.ctx_len = 128;
    tc.report_every = std::max<size_t>(1, a.steps / 4);

    std::vector<std::vector<std::string>> rows;
    std::string counts_note;
    for (auto& [name, cfg] : runs) {
        cfg.seed = a.seed;
        cfg.max_seq_len =
            std::max(cfg.max_seq_len, tc.task.ctx_len + tc.task.r_queries * dint::task::kRoundLen);
        auto model = dint::Model<float>::init(cfg);
        dint::train_needle(model, tc);

        // Held-out slices: unweighted per-token losses over fresh samples,
        // identical across variants.
        dint::Rng eval_rng = dint::Rng(a.seed).fork(dint::fnv1a("ablate_eval"));
        double sum_valid = 0, sum_hit = 0, sum_other = 0;
        size_t n_valid = 0, n_hit = 0, n_other = 0;
        for (size_t i = 0; i < a.eval_samples; ++i) {
            dint::task::NeedleParams p = tc.task;
            p.depth = eval_rng.uniform();
            auto sample = dint::task::generate_needle(p, eval_rng);
            std::vector<int> input(sample.tokens.begin(), sample.tokens.end() - 1);
            std::vector<int> targets(sample.tokens.begin() + 1, sample.tokens.end());
            std::vector<double> nll;
            auto logits = model.forward(nullptr, input);
            dint::cross_entropy<float>(nullptr, logits, targets, nullptr, &nll);
            auto flags = dint::task::ar_hit_flags(sample.tokens, 2);
            auto s = dint::task::slice_loss(nll, flags, 2);
            sum_valid += s.valid * static_cast<double>(s.n_valid);
            n_valid += s.n_valid;
            sum_hit += s.ar_hit * static_cast<double>(s.n_ar_hit);
            n_hit += s.n_ar_hit;
            sum_other += s.others * static_cast<double>(s.n_others);
            n_other += s.n_others;
        }
        rows.push_back({name, dint::fmt_g(n_valid ? sum_valid / n_valid : 0),
                        dint::fmt_g(n_hit ? sum_hit / n_hit : 0),
                        dint::fmt_g(n_other ? sum_other / n_other : 0)});
        counts_note = "counts: valid=" + std::to_string(n_valid) +
                      " ar_hit=" + std::to_string(n_hit) + " others=" + std::to_string(n_other);
        std::cout << "variant " << name << ": valid " << rows.back()[1] << ", repeated-context "
                  << rows.back()[2] << ", others " << rows.back()[3] << "\n";
    }
    dint::write_csv(a.out_dir + "/ablation.csv", man.comment() + "\n# " + counts_note,
                    {"variant", "valid", "ar_hit", "others"}, rows);
    std::cout << "wrote " << a.out_dir << "/ablation.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"decoder LM with differential + integral attention"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train a model on the retrieval task");
    train->add_option("--config", ta.config_path, "model config file (key = value lines)");
    train->add_option("--arch", ta.arch, "override arch: vanilla|diff|dint");
    train->add_option("--steps", ta.tc.steps, "optimizer steps");
    train->add_option("--seed", ta.seed, "seed for params and data");
    train->add_option("--out", ta.out_dir, "output directory")->required();
    train->add_option("--batch", ta.tc.batch, "sequences per step");
    train->add_option("--peak-lr", ta.tc.schedule.peak, "peak learning rate");
    train->add_option("--warmup", ta.tc.schedule.warmup, "warmup steps");
    train->add_option("--clip", ta.tc.clip, "gradient norm clip");
    train->add_option("--bg-weight", ta.tc.background_weight, "loss weight off answer spans");
    train->add_option("--ctx", ta.tc.task.ctx_len, "haystack length");
    train->add_option("--needles", ta.tc.task.n_needles, "facts per sample");
    train->add_option("--rqueries", ta.tc.task.r_queries, "query rounds per sample");
    train->add_option("--report-every", ta.tc.report_every, "CSV row interval");

    NeedleArgs na;
    auto* needle = app.add_subcommand("needle", "retrieval accuracy grid for checkpoints");
    needle->add_option("--checkpoints", na.checkpoints, "checkpoint files")
        ->required()
        ->delimiter(',');
    needle->add_option("--needles", na.needles, "needle counts")->delimiter(',');
    needle->add_option("--queries", na.queries, "query counts")->delimiter(',');
    needle->add_option("--ctx-len", na.ctx_lens, "haystack lengths")->delimiter(',');
    needle->add_option("--samples", na.samples, "samples per grid cell");
    needle->add_option("--seed", na.seed, "evaluation seed");
    needle->add_option("--out", na.out_dir, "output directory")->required();

    AnalyzeArgs aa;
    auto* analyze = app.add_subcommand("analyze", "attention allocation and row-sum audit");
    analyze->add_option("--checkpoint", aa.checkpoint, "checkpoint file")->required();
    analyze->add_option("--task", aa.task_path, "task spec file (key = value lines)");
    analyze->add_flag("--capture", aa.capture, "dump attention matrices for one sample");
    analyze->add_option("--layer", aa.layer, "layer to score (-1 = final)");
    analyze->add_option("--out", aa.out_dir, "output directory")->required();

    GradcheckArgs ga;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    gradcheck->add_option("--config", ga.config_path, "model config for the end-to-end check");
    gradcheck->add_option("--tolerance", ga.tolerance, "max relative error");
    gradcheck->add_option("--eps", ga.eps, "finite-difference step");
    gradcheck->add_option("--probes", ga.probes, "random elements probed per op");
    gradcheck->add_option("--seed", ga.seed, "probe seed");
    gradcheck->add_option("--out", ga.out_dir, "optional output directory for the report");
    gradcheck->add_option("--inject-fault", ga.inject_fault, "corrupt an op's backward (testing)")
        ->group("");

    AblateArgs ba;
    auto* ablate = app.add_subcommand("ablate", "train variants and slice their losses");
    ablate->add_option("--config", ba.config_path, "base model config file");
    ablate->add_option("--variants", ba.variants, "variant names")->delimiter(',');
    ablate->add_option("--seed", ba.seed, "shared seed for params and data");
    ablate->add_option("--steps", ba.steps, "training steps per variant");
    ablate->add_option("--batch", ba.batch, "sequences per step");
    ablate->add_option("--eval-samples", ba.eval_samples, "held-out samples for slicing");
    ablate->add_option("--out", ba.out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
        if (*train) return cmd_train(ta);
        if (*needle) return cmd_needle(na);
        if (*analyze) return cmd_analyze(aa);
        if (*gradcheck) return cmd_gradcheck(ga);
        if (*ablate) return cmd_ablate(ba);
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const dint::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const dint::FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 4;
    } catch (const dint::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const dint::CapacityError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::out_of_range& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
