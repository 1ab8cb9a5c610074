// Integration tests driving the odelab binary; the binary path arrives as argv[1].
#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string g_binary;
fs::path g_scratch;

struct RunOutput {
    int exit_code;
    std::string out;
    std::string err;
};

RunOutput run_cli(const std::string& args) {
    fs::path out_file = g_scratch / "stdout.txt";
    fs::path err_file = g_scratch / "stderr.txt";
    std::string cmd = g_binary + " " + args + " >" + out_file.string() + " 2>" + err_file.string();
    int status = std::system(cmd.c_str());
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    return {WEXITSTATUS(status), slurp(out_file), slurp(err_file)};
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

std::vector<fs::path> run_dirs(const std::string& prefix) {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(g_scratch / "runs"))
        if (e.is_directory() && e.path().filename().string().rfind(prefix, 0) == 0)
            dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    return dirs;
}

std::vector<char> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string pretrain_cfg() {
    return "[model]\nlayers=3\nd_model=16\nn_heads=2\nd_ff=32\nmax_seq_len=32\n"
           "[train]\nsteps=12\nbatch=4\nseq_len=16\npeak_lr=3e-3\nmin_lr=3e-4\n"
           "[corpus]\nsource=synthetic\nbytes=3000\nseed=3\n";
}

}  // namespace

TEST_CASE("version flag") {
    RunOutput r = run_cli("--version");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("odelab") != std::string::npos);
    CHECK(r.out.find("checkpoint format") != std::string::npos);
}

TEST_CASE("unknown subcommand exits 1 with usage text on stderr") {
    RunOutput r = run_cli("frobnicate");
    CHECK(r.exit_code == 1);
    CHECK(!r.err.empty());
}

TEST_CASE("no subcommand exits 1") {
    CHECK(run_cli("").exit_code == 1);
}

TEST_CASE("ode-verify emits the order CSV") {
    RunOutput r = run_cli("ode-verify --out " + (g_scratch / "runs").string());
    REQUIRE(r.exit_code == 0);
    auto dirs = run_dirs("ode-verify-");
    REQUIRE(!dirs.empty());
    fs::path dir = dirs.back();
    CHECK(fs::exists(dir / "resolved.cfg"));
    CHECK(fs::exists(dir / "bound_check.csv"));
    std::ifstream csv(dir / "ode_verify.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "field,s,local_error,global_error,fitted_global_order,fitted_local_order");
    int rows = 0;
    bool orders_ok = true;
    while (std::getline(csv, line)) {
        ++rows;
        // fifth column: fitted global order
        std::stringstream ss(line);
        std::string tok;
        for (int i = 0; i < 5; ++i) std::getline(ss, tok, ',');
        double order = std::stod(tok);
        orders_ok = orders_ok && order > 0.9 && order < 1.1;
    }
    CHECK(rows == 6);  // two fields x three step sizes
    CHECK(orders_ok);
}

TEST_CASE("config with unknown key exits 1") {
    write_file(g_scratch / "bad.cfg", "[model]\nlayerz=3\n");
    RunOutput r = run_cli("pretrain --config " + (g_scratch / "bad.cfg").string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("layerz") != std::string::npos);
}

TEST_CASE("config with unknown section exits 1") {
    write_file(g_scratch / "badsec.cfg", "[nonsense]\nx=1\n");
    CHECK(run_cli("pretrain --config " + (g_scratch / "badsec.cfg").string()).exit_code == 1);
}

TEST_CASE("malformed config value exits 1") {
    write_file(g_scratch / "badval.cfg", "[model]\nlayers=three\n");
    CHECK(run_cli("pretrain --config " + (g_scratch / "badval.cfg").string()).exit_code == 1);
}

TEST_CASE("missing config file exits 1") {
    CHECK(run_cli("pretrain --config " + (g_scratch / "nope.cfg").string()).exit_code == 1);
}

TEST_CASE("pretrain twice with the same seed gives identical checkpoints") {
    write_file(g_scratch / "pre.cfg", pretrain_cfg());
    std::string base = "pretrain --config " + (g_scratch / "pre.cfg").string() + " --out " +
                       (g_scratch / "runs").string() + " --seed 7";
    REQUIRE(run_cli(base).exit_code == 0);
    REQUIRE(run_cli(base).exit_code == 0);
    auto dirs = run_dirs("pretrain-");
    REQUIRE(dirs.size() >= 2);
    fs::path a = dirs[dirs.size() - 2] / "model.ckpt";
    fs::path b = dirs[dirs.size() - 1] / "model.ckpt";
    CHECK(read_bytes(a) == read_bytes(b));
    CHECK(fs::exists(dirs.back() / "resolved.cfg"));
    CHECK(fs::exists(dirs.back() / "train_log.csv"));

    // resolved config records the effective settings
    std::ifstream rc(dirs.back() / "resolved.cfg");
    std::stringstream ss;
    ss << rc.rdbuf();
    CHECK(ss.str().find("layers=3") != std::string::npos);
    CHECK(ss.str().find("seed=7") != std::string::npos);
}

TEST_CASE("search audit stays within budget and best beats baseline") {
    auto dirs = run_dirs("pretrain-");
    REQUIRE(!dirs.empty());
    std::string ckpt = (dirs.back() / "model.ckpt").string();
    RunOutput r = run_cli("search --checkpoint " + ckpt + " --iters 2 --budget 12 --seed 3 --out " +
                          (g_scratch / "runs").string());
    REQUIRE(r.exit_code == 0);
    auto sdirs = run_dirs("search-");
    REQUIRE(!sdirs.empty());
    std::ifstream csv(sdirs.back() / "search_audit.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "trial,betas,sum_beta_s,metric,status");
    int rows = 0;
    double first_metric = -1.0, best = 1e300;
    while (std::getline(csv, line)) {
        std::stringstream ss(line);
        std::string tok;
        std::getline(ss, tok, ',');        // trial
        std::getline(ss, tok, '"');        // up to opening quote
        std::getline(ss, tok, '"');        // betas
        std::getline(ss, tok, ',');        // comma after quote
        std::getline(ss, tok, ',');        // sum
        std::getline(ss, tok, ',');        // metric
        double metric = std::stod(tok);
        if (rows == 0) first_metric = metric;
        best = std::min(best, metric);
        ++rows;
    }
    CHECK(rows <= 13);  // baseline + budget
    CHECK(rows >= 1);
    CHECK(best <= first_metric);  // never worse than the uniform baseline
    CHECK(fs::exists(sdirs.back() / "best_schedule.cfg"));
}

TEST_CASE("infer works with explicit betas and rejects bad ones") {
    auto dirs = run_dirs("pretrain-");
    REQUIRE(!dirs.empty());
    std::string ckpt = (dirs.back() / "model.ckpt").string();
    RunOutput good = run_cli("infer --checkpoint " + ckpt + " --betas 1.5,1.5 --out " +
                             (g_scratch / "runs").string());
    CHECK(good.exit_code == 0);
    CHECK(good.out.find("perplexity") != std::string::npos);
    // sum(beta*s) = 1.2 misses total time 3
    RunOutput bad = run_cli("infer --checkpoint " + ckpt + " --betas 1.2 --out " +
                            (g_scratch / "runs").string());
    CHECK(bad.exit_code == 1);
}

TEST_CASE("missing checkpoint flag exits 1, bad checkpoint path exits 2") {
    CHECK(run_cli("infer --out " + (g_scratch / "runs").string()).exit_code == 1);
    CHECK(run_cli("infer --checkpoint " + (g_scratch / "missing.ckpt").string() + " --out " +
                  (g_scratch / "runs").string())
              .exit_code == 2);
}

TEST_CASE("analyze emits cosine and hidden-diff CSVs") {
    auto dirs = run_dirs("pretrain-");
    REQUIRE(!dirs.empty());
    std::string ckpt = (dirs.back() / "model.ckpt").string();
    RunOutput r = run_cli("analyze --checkpoint " + ckpt + " --iters 2 --out " +
                          (g_scratch / "runs").string());
    REQUIRE(r.exit_code == 0);
    auto adirs = run_dirs("analyze-");
    REQUIRE(!adirs.empty());
    std::ifstream cos(adirs.back() / "cosine.csv");
    std::string line;
    std::getline(cos, line);  // norm-choice comment
    CHECK(line.rfind("#", 0) == 0);
    std::getline(cos, line);
    CHECK(line == "layer,cosine");
    std::ifstream diff(adirs.back() / "hidden_diff.csv");
    std::getline(diff, line);
    std::getline(diff, line);
    CHECK(line == "iters,absolute,relative");
    std::getline(diff, line);
    CHECK(line.rfind("2,", 0) == 0);
}

TEST_CASE("finetune then exit-train then exit-eval round trip") {
    auto dirs = run_dirs("pretrain-");
    REQUIRE(!dirs.empty());
    std::string ckpt = (dirs.back() / "model.ckpt").string();
    write_file(g_scratch / "ft.cfg",
               "[train]\nsteps=40\nbatch=8\nseq_len=9\npeak_lr=3e-3\nmin_lr=3e-4\n"
               "[task]\nname=majority\nseq_len=9\ntrain_n=64\nvalid_n=32\nseed=4\n");
    write_file(g_scratch / "task.cfg",
               "[task]\nname=majority\nseq_len=9\ntrain_n=64\nvalid_n=32\nseed=4\n");
    std::string runs = (g_scratch / "runs").string();

    REQUIRE(run_cli("finetune --checkpoint " + ckpt + " --config " + (g_scratch / "ft.cfg").string() +
                    " --seed 5 --out " + runs)
                .exit_code == 0);
    auto fdirs = run_dirs("finetune-");
    REQUIRE(!fdirs.empty());
    std::string clf = (fdirs.back() / "classifier.ckpt").string();

    REQUIRE(run_cli("exit-train --checkpoint " + clf + " --config " + (g_scratch / "ft.cfg").string() +
                    " --iters 3 --seed 6 --out " + runs)
                .exit_code == 0);
    auto edirs = run_dirs("exit-train-");
    REQUIRE(!edirs.empty());
    std::string exit_ckpt = (edirs.back() / "exit_model.ckpt").string();

    RunOutput ee = run_cli("exit-eval --checkpoint " + exit_ckpt + " --config " +
                           (g_scratch / "task.cfg").string() + " --out " + runs);
    REQUIRE(ee.exit_code == 0);
    auto vdirs = run_dirs("exit-eval-");
    REQUIRE(!vdirs.empty());
    std::ifstream csv(vdirs.back() / "exit_sweep.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "threshold,avg_iterations,accuracy");
    int rows = 0;
    double prev_avg = 1e300;
    while (std::getline(csv, line)) {
        std::stringstream ss(line);
        std::string tok;
        std::getline(ss, tok, ',');
        std::getline(ss, tok, ',');
        double avg = std::stod(tok);
        CHECK(avg <= prev_avg);  // non-increasing over the default ascending thresholds
        prev_avg = avg;
        ++rows;
    }
    CHECK(rows == 9);  // default threshold list
}

TEST_CASE("workers flag is accepted and does not change results") {
    auto dirs = run_dirs("pretrain-");
    REQUIRE(!dirs.empty());
    std::string ckpt = (dirs.back() / "model.ckpt").string();
    RunOutput one = run_cli("infer --checkpoint " + ckpt + " --iters 3 --workers 1 --out " +
                            (g_scratch / "runs").string());
    RunOutput four = run_cli("infer --checkpoint " + ckpt + " --iters 3 --workers 4 --out " +
                             (g_scratch / "runs").string());
    REQUIRE(one.exit_code == 0);
    REQUIRE(four.exit_code == 0);
    CHECK(one.out.substr(0, one.out.find("run dir")) == four.out.substr(0, four.out.find("run dir")));
}

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-odelab>\n");
        return 1;
    }
    g_binary = argv[1];
    g_scratch = fs::temp_directory_path() / "odelm_cli_test";
    fs::remove_all(g_scratch);
    fs::create_directories(g_scratch / "runs");
    doctest::Context ctx;
    ctx.applyCommandLine(1, argv);
    int rc = ctx.run();
    fs::remove_all(g_scratch);
    return rc;
}
