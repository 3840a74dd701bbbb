// End-to-end checks of the command line tool: exit codes, output files, and
// determinism. Each case spawns the real binary (path injected by the build)
// and inspects what lands on disk. Output is always redirected to a file,
// never piped.
#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = -1;
    std::string output;  // stdout and stderr combined
};

fs::path scratch_root() {
    static fs::path root = [] {
        fs::path p = fs::temp_directory_path() / "dint_cli_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

// Fresh per-case directory so cases stay independent.
fs::path case_dir(const std::string& name) {
    fs::path p = scratch_root() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

CliResult run_cli(const std::string& args) {
    static int counter = 0;
    fs::path capture = scratch_root() / ("out" + std::to_string(counter++) + ".txt");
    std::string cmd = std::string("'") + DINT_CLI_PATH + "' " + args + " > '" +
                      capture.string() + "' 2>&1";
    int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream is(capture);
    std::stringstream ss;
    ss << is.rdbuf();
    r.output = ss.str();
    return r;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    os << text;
    REQUIRE(os.good());
}

std::string read_text(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) out.push_back(line);
    return out;
}

// Full config text; the parser wants every key present.
std::string config_text(const std::string& arch, size_t layers, size_t d_model, size_t d,
                        size_t heads, size_t max_seq) {
    std::ostringstream os;
    os << "arch = " << arch << "\n";
    os << "layers = " << layers << "\n";
    os << "d_model = " << d_model << "\n";
    os << "d = " << d << "\n";
    os << "heads = " << heads << "\n";
    os << "vocab_size = 96\n";
    os << "max_seq_len = " << max_seq << "\n";
    os << "lambda_init = schedule\n";
    os << "tie_gamma = true\n";
    os << "headwise_norm = true\n";
    os << "g_mode = causal_prefix\n";
    os << "tie_embeddings = true\n";
    os << "use_rope = true\n";
    os << "seed = 1\n";
    return os.str();
}

}  // namespace

TEST_CASE("cli: usage errors exit with code 2") {
    CHECK(run_cli("").code == 2);
    CHECK(run_cli("frobnicate").code == 2);
    CHECK(run_cli("train --steps 1").code == 2);  // --out is required
    CHECK(run_cli("train --no-such-flag x --out /tmp/nowhere").code == 2);
}

TEST_CASE("cli: train refuses an unreadable config and writes nothing") {
    fs::path dir = case_dir("train_missing_config");
    fs::path out = dir / "run";
    auto r = run_cli("train --config '" + (dir / "absent.cfg").string() + "' --steps 1 --out '" +
                     out.string() + "'");
    CHECK(r.code == 2);
    CHECK(!fs::exists(out));
}

TEST_CASE("cli: train --steps 0 writes manifest and initial checkpoint only") {
    fs::path dir = case_dir("train_zero_steps");
    write_text(dir / "model.cfg", config_text("dint", 1, 32, 8, 2, 64));
    fs::path out = dir / "run";
    auto r = run_cli("train --config '" + (dir / "model.cfg").string() +
                     "' --steps 0 --ctx 32 --needles 1 --rqueries 1 --seed 4 --out '" +
                     out.string() + "'");
    REQUIRE(r.code == 0);
    CHECK(fs::exists(out / "manifest.json"));
    CHECK(fs::exists(out / "model.ckpt"));
    CHECK(!fs::exists(out / "train.csv"));
    CHECK(!fs::exists(out / "summary.json"));
}

TEST_CASE("cli: a short training run writes the full output set with matching stamps") {
    fs::path dir = case_dir("train_short");
    write_text(dir / "model.cfg", config_text("dint", 1, 32, 8, 2, 64));
    fs::path out = dir / "run";
    auto r = run_cli("train --config '" + (dir / "model.cfg").string() +
                     "' --steps 3 --batch 2 --ctx 32 --needles 1 --rqueries 1 "
                     "--report-every 1 --seed 4 --out '" +
                     out.string() + "'");
    REQUIRE(r.code == 0);
    REQUIRE(fs::exists(out / "manifest.json"));
    REQUIRE(fs::exists(out / "train.csv"));
    REQUIRE(fs::exists(out / "model.ckpt"));
    REQUIRE(fs::exists(out / "summary.json"));

    auto csv = lines_of(read_text(out / "train.csv"));
    REQUIRE(csv.size() >= 5);  // comment, header, 3 step rows
    CHECK(csv[0].rfind("# manifest=", 0) == 0);
    CHECK(csv[1] == "step,loss,ar_hit_loss,others_loss,lr,grad_norm,row_sum_max_dev");
    CHECK(csv.size() == 5);
    CHECK(csv[2].rfind("1,", 0) == 0);
    CHECK(csv[4].rfind("3,", 0) == 0);

    // The same manifest hash stamps the checkpoint meta and the summary.
    std::string hash = csv[0].substr(std::string("# manifest=").size());
    CHECK(read_text(out / "model.ckpt").find("manifest=" + hash) != std::string::npos);
    CHECK(read_text(out / "summary.json").find(hash) != std::string::npos);
}

TEST_CASE("cli: identical train invocations produce byte-identical outputs") {
    fs::path dir = case_dir("train_determinism");
    write_text(dir / "model.cfg", config_text("dint", 1, 32, 8, 2, 64));
    fs::path out = dir / "run";
    std::string cmd = "train --config '" + (dir / "model.cfg").string() +
                      "' --steps 2 --batch 2 --ctx 32 --needles 1 --rqueries 1 "
                      "--report-every 1 --seed 9 --out '" +
                      out.string() + "'";
    REQUIRE(run_cli(cmd).code == 0);
    fs::path kept = dir / "first";
    fs::rename(out, kept);
    REQUIRE(run_cli(cmd).code == 0);
    CHECK(read_text(out / "train.csv") == read_text(kept / "train.csv"));
    CHECK(read_text(out / "model.ckpt") == read_text(kept / "model.ckpt"));
    CHECK(read_text(out / "manifest.json") == read_text(kept / "manifest.json"));
    // summary.json carries wall-clock seconds, so it is exempt by design.
}

TEST_CASE("cli: needle grid covers every requested cell at the stated sample count") {
    fs::path dir = case_dir("needle_grid");
    write_text(dir / "model.cfg", config_text("dint", 1, 32, 8, 2, 128));
    fs::path trained = dir / "init";
    REQUIRE(run_cli("train --config '" + (dir / "model.cfg").string() +
                    "' --steps 0 --ctx 48 --needles 2 --rqueries 1 --seed 2 --out '" +
                    trained.string() + "'")
                .code == 0);
    fs::path ckpt = trained / "model.ckpt";
    fs::path out = dir / "grid";
    auto r = run_cli("needle --checkpoints '" + ckpt.string() +
                     "' --needles 1,2 --queries 1 --ctx-len 48,64 --samples 2 --seed 3 --out '" +
                     out.string() + "'");
    REQUIRE(r.code == 0);
    auto csv = lines_of(read_text(out / "accuracy.csv"));
    REQUIRE(csv.size() >= 2);
    CHECK(csv[0].rfind("# manifest=", 0) == 0);
    CHECK(csv[1] == "model,n_needles,r_queries,ctx_len,depth,accuracy,samples");
    // one checkpoint x 2 needle counts x 1 query count x 2 lengths x 5 depths
    REQUIRE(csv.size() == 2 + 20);
    for (size_t i = 2; i < csv.size(); ++i) {
        CHECK(csv[i].rfind("model,", 0) == 0);  // checkpoint file stem
        CHECK(csv[i].substr(csv[i].size() - 2) == ",2");
        // accuracy column parses and stays in [0, 1]
        std::vector<std::string> cells;
        std::istringstream is(csv[i]);
        std::string cell;
        while (std::getline(is, cell, ',')) cells.push_back(cell);
        REQUIRE(cells.size() == 7);
        double acc = std::stod(cells[5]);
        CHECK(acc >= 0.0);
        CHECK(acc <= 1.0);
    }
}

TEST_CASE("cli: needle rejects a malformed checkpoint with exit 4") {
    fs::path dir = case_dir("needle_bad_ckpt");
    write_text(dir / "junk.ckpt", "this is not a checkpoint");
    auto r = run_cli("needle --checkpoints '" + (dir / "junk.ckpt").string() + "' --out '" +
                     (dir / "grid").string() + "'");
    CHECK(r.code == 4);
}

TEST_CASE("cli: analyze reports signed and absolute allocation and captures every map") {
    fs::path dir = case_dir("analyze_capture");
    write_text(dir / "model.cfg", config_text("dint", 2, 32, 8, 2, 128));
    fs::path trained = dir / "init";
    REQUIRE(run_cli("train --config '" + (dir / "model.cfg").string() +
                    "' --steps 0 --ctx 48 --needles 2 --rqueries 1 --seed 6 --out '" +
                    trained.string() + "'")
                .code == 0);
    write_text(dir / "task.cfg",
               "ctx_len = 48\nn_needles = 2\nr_queries = 1\nsamples = 2\nseed = 9\n");
    fs::path out = dir / "report";
    auto r = run_cli("analyze --checkpoint '" + (trained / "model.ckpt").string() + "' --task '" +
                     (dir / "task.cfg").string() + "' --capture --out '" + out.string() + "'");
    REQUIRE(r.code == 0);

    auto score = lines_of(read_text(out / "score.csv"));
    REQUIRE(score.size() == 2 + 5);  // comment, header, one row per depth
    CHECK(score[1] == "depth,answer_signed,noise_signed,answer_abs_share,noise_abs_share,samples");

    auto audit = lines_of(read_text(out / "audit.csv"));
    REQUIRE(audit.size() == 2 + 5);
    CHECK(audit[1] == "depth,row_sum_max_dev");
    for (size_t i = 2; i < audit.size(); ++i) {
        auto comma = audit[i].find(',');
        REQUIRE(comma != std::string::npos);
        CHECK(std::stod(audit[i].substr(comma + 1)) < 1e-3);
    }

    // Capture: one block per layer, head, and map kind, nothing else.
    REQUIRE(fs::exists(out / "maps.mats"));
    REQUIRE(fs::exists(out / "maps.index.txt"));
    CHECK(read_text(out / "maps.mats").substr(0, 8) == "DINTMATS");
    std::set<std::string> names;
    for (const auto& line : lines_of(read_text(out / "maps.index.txt"))) {
        if (line.empty() || line[0] == '#') continue;
        names.insert(line.substr(0, line.find(' ')));
    }
    std::set<std::string> want;
    for (int l = 0; l < 2; ++l)
        for (int h = 0; h < 2; ++h)
            for (const char* kind : {"a1", "a2", "gi", "a_final", "out"})
                want.insert("L" + std::to_string(l) + ".h" + std::to_string(h) + "." + kind);
    CHECK(names == want);
}

TEST_CASE("cli: gradcheck is clean by default and flags an injected fault with exit 5") {
    fs::path dir = case_dir("gradcheck");
    write_text(dir / "model.cfg", config_text("dint", 1, 16, 4, 2, 64));
    std::string base = "gradcheck --config '" + (dir / "model.cfg").string() + "' --probes 4";
    auto clean = run_cli(base);
    CHECK(clean.code == 0);
    CHECK(clean.output.find("FAIL") == std::string::npos);

    auto faulty = run_cli(base + " --inject-fault matmul");
    CHECK(faulty.code == 5);
    CHECK(faulty.output.find("gradient check failed for:") != std::string::npos);
    CHECK(faulty.output.find("matmul") != std::string::npos);
}

TEST_CASE("cli: ablate resolves variants before doing any work") {
    fs::path dir = case_dir("ablate_unknown");
    fs::path out = dir / "runs";
    auto r = run_cli("ablate --variants dint,frobnicate --steps 1 --out '" + out.string() + "'");
    CHECK(r.code == 2);
    CHECK(!fs::exists(out));
}

TEST_CASE("cli: ablate writes one sliced row per variant plus shared counts") {
    fs::path dir = case_dir("ablate_slices");
    write_text(dir / "model.cfg", config_text("dint", 1, 32, 8, 2, 160));
    fs::path out = dir / "runs";
    auto r = run_cli("ablate --config '" + (dir / "model.cfg").string() +
                     "' --variants dint,vanilla --steps 2 --batch 1 --eval-samples 2 --out '" +
                     out.string() + "'");
    REQUIRE(r.code == 0);
    auto csv = lines_of(read_text(out / "ablation.csv"));
    REQUIRE(csv.size() == 3 + 2);  // manifest comment, counts comment, header, 2 rows
    CHECK(csv[0].rfind("# manifest=", 0) == 0);
    CHECK(csv[1].rfind("# counts: valid=", 0) == 0);
    CHECK(csv[2] == "variant,valid,ar_hit,others");
    CHECK(csv[3].rfind("dint,", 0) == 0);
    CHECK(csv[4].rfind("vanilla,", 0) == 0);
    for (size_t i = 3; i < csv.size(); ++i) {
        std::vector<std::string> cells;
        std::istringstream is(csv[i]);
        std::string cell;
        while (std::getline(is, cell, ',')) cells.push_back(cell);
        REQUIRE(cells.size() == 4);
        for (size_t c = 1; c < 4; ++c) CHECK(std::isfinite(std::stod(cells[c])));
    }
}
