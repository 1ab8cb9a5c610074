// odelab: one executable for every workflow — numerical verification,
// pre-training, fine-tuning, schedule search, inference, early exit, analysis.
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "odelm/corpus.hpp"
#include "odelm/diagnostics.hpp"
#include "odelm/early_exit.hpp"
#include "odelm/errors.hpp"
#include "odelm/euler.hpp"
#include "odelm/search.hpp"
#include "odelm/train.hpp"

namespace fs = std::filesystem;
using namespace odelm;

namespace {

constexpr const char* kVersion = "odelab 1.0 (checkpoint format v1, config format v1)";

// ---------------------------------------------------------------------------
// config file: [section] headers, key=value lines, '#' comments
// ---------------------------------------------------------------------------

struct ConfigFile {
    std::map<std::string, std::map<std::string, std::string>> sections;

    static ConfigFile parse(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw usage_error("config: cannot open '" + path + "'");
        ConfigFile cfg;
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            auto last = line.find_last_not_of(" \t\r");
            line = line.substr(first, last - first + 1);
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw usage_error("config: malformed section header at line " + std::to_string(lineno));
                section = line.substr(1, line.size() - 2);
                cfg.sections[section];
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw usage_error("config: expected key=value at line " + std::to_string(lineno));
            std::string key = line.substr(0, eq);
            std::string value = line.substr(eq + 1);
            auto trim = [](std::string& s) {
                auto a = s.find_first_not_of(" \t");
                auto b = s.find_last_not_of(" \t");
                s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
            };
            trim(key);
            trim(value);
            if (key.empty()) throw usage_error("config: empty key at line " + std::to_string(lineno));
            cfg.sections[section][key] = value;
        }
        return cfg;
    }

    bool has(const std::string& sec, const std::string& key) const {
        auto s = sections.find(sec);
        return s != sections.end() && s->second.count(key);
    }
    std::string str(const std::string& sec, const std::string& key, const std::string& fallback) const {
        return has(sec, key) ? sections.at(sec).at(key) : fallback;
    }
    int integer(const std::string& sec, const std::string& key, int fallback) const {
        if (!has(sec, key)) return fallback;
        try {
            return std::stoi(sections.at(sec).at(key));
        } catch (const std::exception&) {
            throw usage_error("config: [" + sec + "] " + key + " is not an integer");
        }
    }
    double real(const std::string& sec, const std::string& key, double fallback) const {
        if (!has(sec, key)) return fallback;
        try {
            return std::stod(sections.at(sec).at(key));
        } catch (const std::exception&) {
            throw usage_error("config: [" + sec + "] " + key + " is not a number");
        }
    }

    // reject anything outside the declared schema
    void check_known(const std::map<std::string, std::set<std::string>>& schema) const {
        for (const auto& [sec, kv] : sections) {
            auto it = schema.find(sec);
            if (it == schema.end()) throw usage_error("config: unknown section [" + sec + "]");
            for (const auto& [key, value] : kv)
                if (!it->second.count(key))
                    throw usage_error("config: unknown key '" + key + "' in section [" + sec + "]");
        }
    }
};

const std::set<std::string> kModelKeys = {"layers", "step_size", "param_sets", "d_model",
                                          "n_heads", "d_ff", "vocab_size", "max_seq_len", "objective"};
const std::set<std::string> kTrainKeys = {"steps", "batch", "seq_len", "peak_lr", "min_lr",
                                          "warmup_ratio", "decay", "weight_decay", "grad_clip", "log_every"};
const std::set<std::string> kCorpusKeys = {"source", "bytes", "seed", "path", "train_frac"};
const std::set<std::string> kTaskKeys = {"name", "seq_len", "train_n", "valid_n", "seed"};
const std::set<std::string> kSearchKeys = {"iters", "budget", "grid_min", "grid_max", "grid_step", "metric"};
const std::set<std::string> kScheduleKeys = {"iters", "betas"};
const std::set<std::string> kExitKeys = {"thresholds"};
const std::set<std::string> kEvalKeys = {"seq_len", "max_windows"};
const std::set<std::string> kRunKeys = {"seed", "out"};

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::string checkpoint_path;
    uint64_t seed = 0;
    bool seed_set = false;
    int workers = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_checkpoint) {
    cmd->add_option("--config", args.config_path, "config file (sections of key=value)");
    cmd->add_option("--out", args.out_dir, "parent directory for the run directory");
    cmd->add_option("--seed", args.seed, "master seed (all streams derive from it)")
        ->each([&args](const std::string&) { args.seed_set = true; });
    cmd->add_option("--workers", args.workers, "max worker threads for batched evaluation")
        ->check(CLI::PositiveNumber);
    if (with_checkpoint) cmd->add_option("--checkpoint", args.checkpoint_path, "input checkpoint");
}

ConfigFile load_config(const CommonArgs& args, const std::map<std::string, std::set<std::string>>& schema) {
    ConfigFile cfg;
    if (!args.config_path.empty()) cfg = ConfigFile::parse(args.config_path);
    cfg.check_known(schema);
    return cfg;
}

uint64_t resolve_seed(const CommonArgs& args, const ConfigFile& cfg) {
    if (args.seed_set) return args.seed;  // flags override the file
    return static_cast<uint64_t>(cfg.integer("run", "seed", 0));
}

fs::path make_run_dir(const CommonArgs& args, const ConfigFile& cfg, const std::string& subcmd,
                      uint64_t seed) {
    std::string base = !args.out_dir.empty() ? args.out_dir : cfg.str("run", "out", "runs");
    auto now = std::chrono::system_clock::now();
    std::time_t tt = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", std::gmtime(&tt));
    auto us = std::chrono::duration_cast<std::chrono::microseconds>(now.time_since_epoch()).count() % 1000000;
    char name[96];
    std::snprintf(name, sizeof name, "%s-%s%06lld-seed%llu", subcmd.c_str(), stamp,
                  static_cast<long long>(us), static_cast<unsigned long long>(seed));
    fs::path dir = fs::path(base) / name;
    fs::create_directories(dir);
    return dir;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// every run directory carries the resolved configuration
void write_resolved(const fs::path& dir, const std::map<std::string, std::map<std::string, std::string>>& resolved) {
    std::ofstream out(dir / "resolved.cfg");
    for (const auto& [sec, kv] : resolved) {
        out << "[" << sec << "]\n";
        for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
        out << "\n";
    }
}

ModelConfig model_from_config(const ConfigFile& cfg) {
    ModelConfig m;
    m.layers = cfg.integer("model", "layers", m.layers);
    m.step_size = cfg.real("model", "step_size", m.step_size);
    m.param_sets = cfg.integer("model", "param_sets", m.param_sets);
    m.d_model = cfg.integer("model", "d_model", m.d_model);
    m.n_heads = cfg.integer("model", "n_heads", m.n_heads);
    m.d_ff = cfg.integer("model", "d_ff", m.d_ff);
    m.vocab_size = cfg.integer("model", "vocab_size", m.vocab_size);
    m.max_seq_len = cfg.integer("model", "max_seq_len", m.max_seq_len);
    m.objective = objective_from_name(cfg.str("model", "objective", "causal-lm"));
    return m;
}

TrainConfig train_from_config(const ConfigFile& cfg, uint64_t seed) {
    TrainConfig tc;
    tc.steps = cfg.integer("train", "steps", tc.steps);
    tc.batch = cfg.integer("train", "batch", tc.batch);
    tc.seq_len = cfg.integer("train", "seq_len", tc.seq_len);
    tc.peak_lr = cfg.real("train", "peak_lr", tc.peak_lr);
    tc.min_lr = cfg.real("train", "min_lr", tc.min_lr);
    tc.warmup_ratio = cfg.real("train", "warmup_ratio", tc.warmup_ratio);
    tc.decay = decay_from_name(cfg.str("train", "decay", "linear"));
    tc.weight_decay = cfg.real("train", "weight_decay", tc.weight_decay);
    tc.grad_clip = cfg.real("train", "grad_clip", tc.grad_clip);
    tc.log_every = cfg.integer("train", "log_every", tc.log_every);
    tc.seed = seed;
    return tc;
}

std::map<std::string, std::string> model_resolved(const ModelConfig& m) {
    return {{"layers", std::to_string(m.layers)},       {"step_size", fmt(m.step_size)},
            {"param_sets", std::to_string(m.param_sets)}, {"d_model", std::to_string(m.d_model)},
            {"n_heads", std::to_string(m.n_heads)},     {"d_ff", std::to_string(m.d_ff)},
            {"vocab_size", std::to_string(m.vocab_size)}, {"max_seq_len", std::to_string(m.max_seq_len)},
            {"objective", objective_name(m.objective)}};
}

std::map<std::string, std::string> train_resolved(const TrainConfig& tc) {
    return {{"steps", std::to_string(tc.steps)},       {"batch", std::to_string(tc.batch)},
            {"seq_len", std::to_string(tc.seq_len)},   {"peak_lr", fmt(tc.peak_lr)},
            {"min_lr", fmt(tc.min_lr)},                {"warmup_ratio", fmt(tc.warmup_ratio)},
            {"decay", decay_name(tc.decay)},           {"weight_decay", fmt(tc.weight_decay)},
            {"grad_clip", fmt(tc.grad_clip)},          {"log_every", std::to_string(tc.log_every)},
            {"seed", std::to_string(tc.seed)}};
}

// Corpus ids are self-describing so later stages can rebuild the data from a
// checkpoint alone: "synthetic-<bytes>-<seed>" or "file-<path>".
Corpus corpus_from_config(const ConfigFile& cfg, std::map<std::string, std::string>* resolved) {
    std::string source = cfg.str("corpus", "source", "synthetic");
    double train_frac = cfg.real("corpus", "train_frac", 0.9);
    if (source == "file") {
        std::string path = cfg.str("corpus", "path", "");
        if (path.empty()) throw usage_error("corpus: source=file needs path=");
        if (!fs::exists(path)) throw usage_error("corpus: file '" + path + "' does not exist");
        if (resolved) *resolved = {{"source", "file"}, {"path", path}, {"train_frac", fmt(train_frac)}};
        Corpus c = Corpus::from_file(path, train_frac);
        c.id = "file-" + path;
        return c;
    }
    if (source != "synthetic") throw usage_error("corpus: source must be synthetic or file");
    int bytes = cfg.integer("corpus", "bytes", 200000);
    int cseed = cfg.integer("corpus", "seed", 1);
    if (resolved)
        *resolved = {{"source", "synthetic"},
                     {"bytes", std::to_string(bytes)},
                     {"seed", std::to_string(cseed)},
                     {"train_frac", fmt(train_frac)}};
    std::string id = "synthetic-" + std::to_string(bytes) + "-" + std::to_string(cseed);
    return Corpus::from_text(id, synthetic_text(static_cast<std::size_t>(bytes), cseed), train_frac);
}

Corpus corpus_from_id(const std::string& id) {
    if (id.rfind("synthetic-", 0) == 0) {
        auto rest = id.substr(10);
        auto dash = rest.find('-');
        if (dash != std::string::npos) {
            int bytes = std::stoi(rest.substr(0, dash));
            int cseed = std::stoi(rest.substr(dash + 1));
            return Corpus::from_text(id, synthetic_text(static_cast<std::size_t>(bytes), cseed));
        }
    }
    if (id.rfind("file-", 0) == 0) {
        Corpus c = Corpus::from_file(id.substr(5));
        c.id = id;
        return c;
    }
    throw usage_error("cannot rebuild corpus '" + id + "'; provide a [corpus] section");
}

TaskDataset task_from_config(const ConfigFile& cfg, const Corpus& corpus,
                             std::map<std::string, std::string>* resolved) {
    std::string name = cfg.str("task", "name", "majority");
    int seq_len = cfg.integer("task", "seq_len", name == "majority" ? 9 : 8);
    int train_n = cfg.integer("task", "train_n", 256);
    int valid_n = cfg.integer("task", "valid_n", 64);
    uint64_t seed = static_cast<uint64_t>(cfg.integer("task", "seed", 1));
    if (resolved)
        *resolved = {{"name", name},
                     {"seq_len", std::to_string(seq_len)},
                     {"train_n", std::to_string(train_n)},
                     {"valid_n", std::to_string(valid_n)},
                     {"seed", std::to_string(seed)}};
    if (name == "brackets") return bracket_task(corpus, seq_len, train_n, valid_n, seed);
    if (name == "majority") return majority_task(corpus, seq_len, train_n, valid_n, seed);
    if (name == "random") return random_label_task(corpus, seq_len, train_n, valid_n, seed);
    throw usage_error("task: name must be brackets, majority or random");
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
    std::vector<double> out;
    std::istringstream in(text);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw usage_error(what + ": '" + tok + "' is not a number");
        }
    }
    if (out.empty()) throw usage_error(what + ": empty list");
    return out;
}

// Reduced schedule resolution: explicit betas win over an iteration count.
StepSchedule schedule_from_config(const ConfigFile& cfg, int cli_iters, const std::string& cli_betas,
                                  const ModelConfig& model, std::map<std::string, std::string>* resolved) {
    std::string betas = !cli_betas.empty() ? cli_betas : cfg.str("schedule", "betas", "");
    if (!betas.empty()) {
        StepSchedule sched;
        sched.base_step = model.step_size;
        sched.total_time = model.total_time();
        sched.scales = parse_double_list(betas, "schedule betas");
        sched.validate();
        if (!sched.covers_total_time())
            throw usage_error("schedule: sum(beta*s) misses the model's total time");
        if (resolved) (*resolved)["betas"] = betas;
        return sched;
    }
    int iters = cli_iters > 0 ? cli_iters : cfg.integer("schedule", "iters", model.layers);
    SearchSpace space;
    space.grid = SearchSpace::default_grid();
    space.target_iters = iters;
    space.total_time = model.total_time();
    space.base_step = model.step_size;
    StepSchedule sched = uniform_schedule(space);
    if (resolved) (*resolved)["iters"] = std::to_string(iters);
    return sched;
}

std::string betas_string(const StepSchedule& sched) {
    std::string s;
    for (std::size_t i = 0; i < sched.scales.size(); ++i) {
        if (i) s += ",";
        s += fmt(sched.scales[i]);
    }
    return s;
}

void write_train_log(const fs::path& path, const std::vector<TrainLogRow>& log) {
    std::ofstream out(path);
    out << "step,lr,loss,grad_norm\n";
    for (const auto& r : log) out << r.step << "," << fmt(r.lr) << "," << fmt(r.loss) << "," << fmt(r.grad_norm) << "\n";
}

// window-parallel perplexity: each worker runs a private clone of the model
double parallel_perplexity(const Checkpoint& ckpt, const StepSchedule& schedule,
                           const std::vector<int>& tokens, int seq_len, int max_windows, int workers) {
    std::vector<std::vector<int>> windows;
    if (tokens.size() < static_cast<std::size_t>(seq_len) + 1)
        throw data_error("evaluation stream shorter than seq_len+1");
    for (std::size_t o = 0; o + seq_len + 1 <= tokens.size(); o += seq_len) {
        windows.emplace_back(tokens.begin() + o, tokens.begin() + o + seq_len + 1);
        if (max_windows > 0 && static_cast<int>(windows.size()) >= max_windows) break;
    }
    const int n = static_cast<int>(windows.size());
    workers = std::max(1, std::min(workers, n));
    std::vector<double> nll(n);
    std::vector<std::size_t> count(n);
    auto run = [&](int worker) {
        Checkpoint local = ckpt.clone();
        NoGradGuard ng;
        for (int i = worker; i < n; i += workers) {
            std::vector<int> inputs(windows[i].begin(), windows[i].end() - 1);
            std::vector<int> targets(windows[i].begin() + 1, windows[i].end());
            ForwardResult fwd = forward(local.bank, inputs, schedule, local.config, false);
            nll[i] = lm_loss(fwd.logits, targets).item() * inputs.size();
            count[i] = inputs.size();
        }
    };
    if (workers == 1) {
        run(0);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
        for (auto& t : pool) t.join();
    }
    double total = 0.0;
    std::size_t positions = 0;
    for (int i = 0; i < n; ++i) {
        total += nll[i];
        positions += count[i];
    }
    return std::exp(total / positions);
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int run_ode_verify(const CommonArgs& args) {
    ConfigFile cfg = load_config(args, {{"run", kRunKeys}});
    uint64_t seed = resolve_seed(args, cfg);
    fs::path dir = make_run_dir(args, cfg, "ode-verify", seed);

    struct NamedField {
        std::string name;
        AnalyticField field;
        Vec y0;
    };
    AnalyticField expf;
    expf.f = [](const Vec& y, double) { return Vec{y[0]}; };
    expf.deriv_bound = 1.0;
    expf.curvature_bound = std::exp(1.0);
    expf.exact = [](double t) { return Vec{std::exp(t)}; };
    AnalyticField sinf;
    sinf.f = [](const Vec& y, double t) { return Vec{std::sin(y[0]) + t}; };
    sinf.deriv_bound = 1.0;
    sinf.curvature_bound = 3.0;
    AnalyticField sin_inner = sinf;
    sinf.exact = [sin_inner](double t) { return euler_reference(sin_inner, {0.5}, 0.0, t, 100000); };
    std::vector<NamedField> fields = {{"exp", expf, {1.0}}, {"sin", sinf, {0.5}}};

    const std::vector<double> steps = {0.1, 0.05, 0.025};
    std::ofstream csv(dir / "ode_verify.csv");
    csv << "field,s,local_error,global_error,fitted_global_order,fitted_local_order\n";
    bool ok = true;
    for (const auto& nf : fields) {
        OrderScan global = error_order_scan(nf.field, nf.y0, 1.0, steps);
        OrderScan local = local_order_scan(nf.field, nf.y0, steps);
        for (std::size_t i = 0; i < steps.size(); ++i)
            csv << nf.name << "," << fmt(steps[i]) << "," << fmt(local.points[i].second) << ","
                << fmt(global.points[i].second) << "," << fmt(global.fitted_order) << ","
                << fmt(local.fitted_order) << "\n";
        std::cout << nf.name << ": global order " << global.fitted_order << ", local order "
                  << local.fitted_order << "\n";
        ok = ok && global.fitted_order > 0.9 && global.fitted_order < 1.1;
    }

    // scaled-step bound check across the beta*/s grid
    std::ofstream bound_csv(dir / "bound_check.csv");
    bound_csv << "field,beta_star,s,observed_gap,bound_value\n";
    for (const auto& nf : fields)
        for (double beta : {1.5, 2.0, 3.0})
            for (double s : {0.1, 0.05}) {
                int iters = static_cast<int>(std::llround(1.0 / (beta * s)));
                StepSchedule sched;
                sched.base_step = s;
                sched.scales.assign(iters, beta);
                sched.total_time = 1.0;
                if (!sched.covers_total_time()) continue;
                ErrorBoundReport rep = verify_bound(nf.field, nf.y0, s, sched);
                bound_csv << nf.name << "," << fmt(beta) << "," << fmt(s) << ","
                          << fmt(rep.observed_gap) << "," << fmt(rep.bound_value) << "\n";
                ok = ok && rep.observed_gap <= rep.bound_value;
            }

    write_resolved(dir, {{"run", {{"seed", std::to_string(seed)}, {"command", "ode-verify"}}}});
    std::cout << "run dir: " << dir.string() << "\n";
    if (!ok) throw numeric_error("ode-verify: order or bound check failed");
    return 0;
}

int run_pretrain(const CommonArgs& args) {
    ConfigFile cfg = load_config(
        args, {{"model", kModelKeys}, {"train", kTrainKeys}, {"corpus", kCorpusKeys}, {"run", kRunKeys}});
    uint64_t seed = resolve_seed(args, cfg);
    fs::path dir = make_run_dir(args, cfg, "pretrain", seed);

    std::map<std::string, std::string> corpus_resolved;
    Corpus corpus = corpus_from_config(cfg, &corpus_resolved);
    ModelConfig model = model_from_config(cfg);
    TrainConfig tc = train_from_config(cfg, seed);

    std::vector<TrainLogRow> log;
    Checkpoint ckpt = pretrain(model, corpus, tc, &log);
    ckpt.save((dir / "model.ckpt").string());
    write_train_log(dir / "train_log.csv", log);
    write_resolved(dir, {{"model", model_resolved(ckpt.config)},
                         {"train", train_resolved(tc)},
                         {"corpus", corpus_resolved},
                         {"run", {{"seed", std::to_string(seed)}, {"command", "pretrain"}}}});
    std::cout << "final train loss: " << ckpt.final_train_loss << "\n";
    std::cout << "checkpoint: " << (dir / "model.ckpt").string() << "\n";
    std::cout << "run dir: " << dir.string() << "\n";
    return 0;
}

int run_finetune(const CommonArgs& args, bool freeze) {
    ConfigFile cfg = load_config(args, {{"train", kTrainKeys},
                                        {"corpus", kCorpusKeys},
                                        {"task", kTaskKeys},
                                        {"run", kRunKeys}});
    if (args.checkpoint_path.empty()) throw usage_error("finetune: --checkpoint is required");
    uint64_t seed = resolve_seed(args, cfg);
    fs::path dir = make_run_dir(args, cfg, "finetune", seed);

    Checkpoint base = Checkpoint::load(args.checkpoint_path);
    Corpus corpus = cfg.sections.count("corpus") ? corpus_from_config(cfg, nullptr)
                                                 : corpus_from_id(base.corpus_id);
    std::map<std::string, std::string> task_resolved;
    TaskDataset data = task_from_config(cfg, corpus, &task_resolved);
    TrainConfig tc = train_from_config(cfg, seed);

    std::vector<TrainLogRow> log;
    Classifier clf = finetune_classifier(base, data, tc, freeze, &log);
    clf.to_checkpoint().save((dir / "classifier.ckpt").string());
    write_train_log(dir / "train_log.csv", log);
    write_resolved(dir, {{"train", train_resolved(tc)},
                         {"task", task_resolved},
                         {"run",
                          {{"seed", std::to_string(seed)},
                           {"command", "finetune"},
                           {"base_checkpoint", args.checkpoint_path},
                           {"freeze_backbone", freeze ? "1" : "0"}}}});
    std::cout << "valid accuracy: " << clf.valid_accuracy << "\n";
    std::cout << "checkpoint: " << (dir / "classifier.ckpt").string() << "\n";
    std::cout << "run dir: " << dir.string() << "\n";
    return 0;
}

int run_search(const CommonArgs& args, int iters, int budget) {
    ConfigFile cfg = load_config(args, {{"search", kSearchKeys},
                                        {"corpus", kCorpusKeys},
                                        {"task", kTaskKeys},
                                        {"eval", kEvalKeys},
                                        {"run", kRunKeys}});
    if (args.checkpoint_path.empty()) throw usage_error("search: --checkpoint is required");
    uint64_t seed = resolve_seed(args, cfg);
    fs::path dir = make_run_dir(args, cfg, "search", seed);

    Checkpoint ckpt = Checkpoint::load(args.checkpoint_path);
    if (iters <= 0) iters = cfg.integer("search", "iters", ckpt.config.layers);
    if (budget < 0) budget = cfg.integer("search", "budget", 50);

    SearchSpace space;
    double grid_min = cfg.real("search", "grid_min", 1.0);
    double grid_max = cfg.real("search", "grid_max", 3.0);
    double grid_step = cfg.real("search", "grid_step", 0.1);
    const int grid_points = static_cast<int>(std::floor((grid_max - grid_min) / grid_step + 1e-9)) + 1;
    for (int i = 0; i < grid_points; ++i)
        space.grid.push_back(std::round((grid_min + i * grid_step) * 1e10) / 1e10);
    space.target_iters = iters;
    space.total_time = ckpt.config.total_time();
    space.base_step = ckpt.config.step_size;

    std::string metric = cfg.str("search", "metric", "perplexity");
    int eval_seq = cfg.integer("eval", "seq_len", 32);
    int eval_windows = cfg.integer("eval", "max_windows", 16);
    Corpus corpus = cfg.sections.count("corpus") ? corpus_from_config(cfg, nullptr)
                                                 : corpus_from_id(ckpt.corpus_id);

    std::function<double(const StepSchedule&)> eval_fn;
    MetricDirection direction;
    if (metric == "perplexity") {
        std::vector<int> valid = corpus.valid_tokens();
        eval_fn = [&ckpt, valid, eval_seq, eval_windows, &args](const StepSchedule& s) {
            return parallel_perplexity(ckpt, s, valid, eval_seq, eval_windows, args.workers);
        };
        direction = MetricDirection::minimize;
    } else if (metric == "accuracy") {
        auto data = std::make_shared<TaskDataset>(task_from_config(cfg, corpus, nullptr));
        auto clf = std::make_shared<Classifier>(Classifier::from_checkpoint(ckpt.clone()));
        eval_fn = [clf, data](const StepSchedule& s) {
            return classifier_accuracy(*clf, data->valid, s);
        };
        direction = MetricDirection::maximize;
    } else {
        throw usage_error("search: metric must be perplexity or accuracy");
    }

    SearchResult res = search_schedule(eval_fn, space, budget, seed, direction);
    write_search_audit((dir / "search_audit.csv").string(), res);
    std::ofstream best(dir / "best_schedule.cfg");
    best << "[schedule]\nbetas=" << betas_string(res.schedule) << "\n";
    write_resolved(dir, {{"search",
                          {{"iters", std::to_string(iters)},
                           {"budget", std::to_string(budget)},
                           {"grid_min", fmt(grid_min)},
                           {"grid_max", fmt(grid_max)},
                           {"grid_step", fmt(grid_step)},
                           {"metric", metric}}},
                         {"eval",
                          {{"seq_len", std::to_string(eval_seq)},
                           {"max_windows", std::to_string(eval_windows)}}},
                         {"run",
                          {{"seed", std::to_string(seed)},
                           {"command", "search"},
                           {"checkpoint", args.checkpoint_path},
                           {"workers", std::to_string(args.workers)}}}});
    std::cout << "best " << metric << ": " << res.metric << "\n";
    std::cout << "best betas: " << betas_string(res.schedule) << "\n";
    std::cout << "trials: " << res.trials.size() << " (budget used " << res.budget_used << ")\n";
    std::cout << "run dir: " << dir.string() << "\n";
    return 0;
}

int run_infer(const CommonArgs& args, int iters, const std::string& betas) {
    ConfigFile cfg = load_config(args, {{"schedule", kScheduleKeys},
                                        {"corpus", kCorpusKeys},
                                        {"eval", kEvalKeys},
                                        {"run", kRunKeys}});
    if (args.checkpoint_path.empty()) throw usage_error("infer: --checkpoint is required");
    uint64_t seed = resolve_seed(args, cfg);
    fs::path dir = make_run_dir(args, cfg, "infer", seed);

    Checkpoint ckpt = Checkpoint::load(args.checkpoint_path);
    std::map<std::string, std::string> sched_resolved;
    StepSchedule sched = schedule_from_config(cfg, iters, betas, ckpt.config, &sched_resolved);
    Corpus corpus = cfg.sections.count("corpus") ? corpus_from_config(cfg, nullptr)
                                                 : corpus_from_id(ckpt.corpus_id);
    int eval_seq = cfg.integer("eval", "seq_len", 32);
    int eval_windows = cfg.integer("eval", "max_windows", 0);

    double ppl = parallel_perplexity(ckpt, sched, corpus.valid_tokens(), eval_seq, eval_windows,
                                     args.workers);
    std::ofstream csv(dir / "metrics.csv");
    csv << "iters,betas,perplexity\n";
    csv << sched.iters() << ",\"" << betas_string(sched) << "\"," << fmt(ppl) << "\n";
    sched_resolved["base_step"] = fmt(sched.base_step);
    write_resolved(dir, {{"schedule", sched_resolved},
                         {"eval",
                          {{"seq_len", std::to_string(eval_seq)},
                           {"max_windows", std::to_string(eval_windows)}}},
                         {"run",
                          {{"seed", std::to_string(seed)},
                           {"command", "infer"},
                           {"checkpoint", args.checkpoint_path},
                           {"workers", std::to_string(args.workers)}}}});
    std::cout << "perplexity: " << ppl << " (" << sched.iters() << " iterations)\n";
    std::cout << "run dir: " << dir.string() << "\n";
    return 0;
}

// Exit heads ride inside a classifier checkpoint as extra tensors.
void attach_heads(Checkpoint& ckpt, const ExitHeads& heads) {
    ckpt.extras["exit.iters"] = std::to_string(heads.schedule.iters());
    ckpt.extras["exit.betas"] = betas_string(heads.schedule);
    ckpt.extras["exit.base_step"] = fmt(heads.schedule.base_step);
    ckpt.extras["exit.total_time"] = fmt(heads.schedule.total_time);
    ckpt.extras["exit.num_classes"] = std::to_string(heads.num_classes);
    for (int i = 0; i < heads.schedule.iters(); ++i) {
        ckpt.extra_tensors.emplace_back("exit" + std::to_string(i) + "_w", heads.weights[i]);
        ckpt.extra_tensors.emplace_back("exit" + std::to_string(i) + "_b", heads.biases[i]);
    }
}

ExitHeads detach_heads(const Checkpoint& ckpt) {
    auto it = ckpt.extras.find("exit.iters");
    if (it == ckpt.extras.end()) throw data_error("checkpoint has no exit heads");
    ExitHeads heads;
    int iters = std::stoi(it->second);
    heads.num_classes = std::stoi(ckpt.extras.at("exit.num_classes"));
    heads.schedule.base_step = std::stod(ckpt.extras.at("exit.base_step"));
    heads.schedule.total_time = std::stod(ckpt.extras.at("exit.total_time"));
    heads.schedule.scales = parse_double_list(ckpt.extras.at("exit.betas"), "exit.betas");
    for (int i = 0; i < iters; ++i) {
        const Tensor* w = ckpt.find_extra("exit" + std::to_string(i) + "_w");
        const Tensor* b = ckpt.find_extra("exit" + std::to_string(i) + "_b");
        if (!w || !b) throw data_error("checkpoint: missing exit head " + std::to_string(i));
        heads.weights.push_back(*w);
        heads.biases.push_back(*b);
    }
    return heads;
}

int run_exit_train(const CommonArgs& args, int iters, const std::string& betas) {
    ConfigFile cfg = load_config(args, {{"train", kTrainKeys},
                                        {"schedule", kScheduleKeys},
                                        {"corpus", kCorpusKeys},
                                        {"task", kTaskKeys},
                                        {"run", kRunKeys}});
    if (args.checkpoint_path.empty()) throw usage_error("exit-train: --checkpoint is required");
    uint64_t seed = resolve_seed(args, cfg);
    fs::path dir = make_run_dir(args, cfg, "exit-train", seed);

    Classifier clf = Classifier::from_checkpoint(Checkpoint::load(args.checkpoint_path));
    Corpus corpus = cfg.sections.count("corpus") ? corpus_from_config(cfg, nullptr)
                                                 : corpus_from_id(clf.ckpt.corpus_id);
    std::map<std::string, std::string> task_resolved;
    TaskDataset data = task_from_config(cfg, corpus, &task_resolved);
    std::map<std::string, std::string> sched_resolved;
    StepSchedule sched = schedule_from_config(cfg, iters, betas, clf.ckpt.config, &sched_resolved);
    TrainConfig tc = train_from_config(cfg, seed);

    std::vector<TrainLogRow> log;
    ExitHeads heads = train_exit_heads(clf, sched, data, tc, &log);
    Checkpoint out = clf.to_checkpoint();
    attach_heads(out, heads);
    out.save((dir / "exit_model.ckpt").string());
    write_train_log(dir / "train_log.csv", log);
    write_resolved(dir, {{"train", train_resolved(tc)},
                         {"task", task_resolved},
                         {"schedule", sched_resolved},
                         {"run",
                          {{"seed", std::to_string(seed)},
                           {"command", "exit-train"},
                           {"base_checkpoint", args.checkpoint_path}}}});
    std::cout << "trained " << heads.schedule.iters() << " exit heads\n";
    std::cout << "checkpoint: " << (dir / "exit_model.ckpt").string() << "\n";
    std::cout << "run dir: " << dir.string() << "\n";
    return 0;
}

int run_exit_eval(const CommonArgs& args, const std::string& thresholds_arg) {
    ConfigFile cfg = load_config(args, {{"exit", kExitKeys},
                                        {"corpus", kCorpusKeys},
                                        {"task", kTaskKeys},
                                        {"run", kRunKeys}});
    if (args.checkpoint_path.empty()) throw usage_error("exit-eval: --checkpoint is required");
    uint64_t seed = resolve_seed(args, cfg);
    fs::path dir = make_run_dir(args, cfg, "exit-eval", seed);

    Checkpoint ckpt = Checkpoint::load(args.checkpoint_path);
    ExitHeads heads = detach_heads(ckpt);
    Classifier clf = Classifier::from_checkpoint(std::move(ckpt));
    Corpus corpus = cfg.sections.count("corpus") ? corpus_from_config(cfg, nullptr)
                                                 : corpus_from_id(clf.ckpt.corpus_id);
    TaskDataset data = task_from_config(cfg, corpus, nullptr);

    std::string spec = !thresholds_arg.empty()
                           ? thresholds_arg
                           : cfg.str("exit", "thresholds", "0,0.01,0.05,0.07,0.1,0.2,0.3,0.4,0.5");
    std::vector<double> thresholds = parse_double_list(spec, "thresholds");

    std::vector<ExitStats> sweep = exit_sweep(clf, heads, thresholds, data.valid);
    write_exit_sweep((dir / "exit_sweep.csv").string(), sweep);
    write_resolved(dir, {{"exit", {{"thresholds", spec}}},
                         {"run",
                          {{"seed", std::to_string(seed)},
                           {"command", "exit-eval"},
                           {"checkpoint", args.checkpoint_path}}}});
    for (const ExitStats& s : sweep)
        std::cout << "threshold " << s.threshold << ": avg iterations " << s.avg_iterations
                  << ", accuracy " << s.accuracy << "\n";
    std::cout << "run dir: " << dir.string() << "\n";
    return 0;
}

int run_analyze(const CommonArgs& args, const std::string& iters_arg) {
    ConfigFile cfg = load_config(args, {{"schedule", kScheduleKeys},
                                        {"corpus", kCorpusKeys},
                                        {"eval", kEvalKeys},
                                        {"run", kRunKeys}});
    if (args.checkpoint_path.empty()) throw usage_error("analyze: --checkpoint is required");
    uint64_t seed = resolve_seed(args, cfg);
    fs::path dir = make_run_dir(args, cfg, "analyze", seed);

    Checkpoint ckpt = Checkpoint::load(args.checkpoint_path);
    Corpus corpus = cfg.sections.count("corpus") ? corpus_from_config(cfg, nullptr)
                                                 : corpus_from_id(ckpt.corpus_id);
    int eval_seq = cfg.integer("eval", "seq_len", 32);
    int eval_windows = cfg.integer("eval", "max_windows", 8);

    StepSchedule unit = StepSchedule::uniform(ckpt.config.layers, ckpt.config.step_size);
    std::vector<Trajectory> full =
        collect_trajectories(ckpt, unit, corpus.valid_tokens(), eval_seq, eval_windows);

    // consecutive-derivative cosines along the full-depth run
    CosineProfile profile = cosine_profile(full);
    std::ofstream cos_csv(dir / "cosine.csv");
    cos_csv << "# cosine of consecutive block derivatives, L2 over flattened state, batch mean\n";
    cos_csv << "layer,cosine\n";
    for (std::size_t i = 0; i < profile.values.size(); ++i)
        cos_csv << (i + 1) << "," << fmt(profile.values[i]) << "\n";

    // terminal-state gap for each reduced iteration count
    std::string spec = !iters_arg.empty() ? iters_arg : cfg.str("schedule", "iters", "");
    std::vector<int> reduced_iters;
    if (!spec.empty())
        for (double v : parse_double_list(spec, "iters")) reduced_iters.push_back(static_cast<int>(v));
    std::ofstream diff_csv(dir / "hidden_diff.csv");
    diff_csv << "# L2 norm over the flattened pre-head final state, averaged over examples\n";
    diff_csv << "iters,absolute,relative\n";
    for (int it : reduced_iters) {
        SearchSpace space;
        space.grid = SearchSpace::default_grid();
        space.target_iters = it;
        space.total_time = ckpt.config.total_time();
        space.base_step = ckpt.config.step_size;
        StepSchedule reduced = uniform_schedule(space);
        std::vector<Trajectory> red =
            collect_trajectories(ckpt, reduced, corpus.valid_tokens(), eval_seq, eval_windows);
        DiffReport rep = hidden_diff(full, red);
        diff_csv << it << "," << fmt(rep.absolute) << "," << fmt(rep.relative) << "\n";
    }

    write_resolved(dir, {{"schedule", {{"iters", spec}}},
                         {"eval",
                          {{"seq_len", std::to_string(eval_seq)},
                           {"max_windows", std::to_string(eval_windows)}}},
                         {"run",
                          {{"seed", std::to_string(seed)},
                           {"command", "analyze"},
                           {"checkpoint", args.checkpoint_path}}}});
    std::cout << "mean cosine: " << profile.mean() << "\n";
    std::cout << "run dir: " << dir.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale laboratory for step-size-aware parameter-shared transformers"};
    app.require_subcommand(0, 1);
    app.set_version_flag("--version", kVersion);

    CommonArgs common;
    int iters = 0;
    int budget = -1;
    bool freeze = false;
    std::string betas, thresholds, iters_list;

    CLI::App* c_ode = app.add_subcommand("ode-verify", "Euler order and error-bound checks on analytic fields");
    add_common(c_ode, common, false);

    CLI::App* c_pre = app.add_subcommand("pretrain", "pre-train a language model");
    add_common(c_pre, common, false);

    CLI::App* c_ft = app.add_subcommand("finetune", "fine-tune a classifier on a synthetic task");
    add_common(c_ft, common, true);
    c_ft->add_flag("--freeze", freeze, "freeze the backbone, train only the head");

    CLI::App* c_search = app.add_subcommand("search", "search per-iteration step scales");
    add_common(c_search, common, true);
    c_search->add_option("--iters", iters, "reduced iteration count");
    c_search->add_option("--budget", budget, "candidate budget beyond the uniform baseline");

    CLI::App* c_infer = app.add_subcommand("infer", "evaluate perplexity under a step-scale schedule");
    add_common(c_infer, common, true);
    c_infer->add_option("--iters", iters, "reduced iteration count (uniform schedule)");
    c_infer->add_option("--betas", betas, "comma-separated explicit scales");

    CLI::App* c_et = app.add_subcommand("exit-train", "train per-iteration early-exit heads");
    add_common(c_et, common, true);
    c_et->add_option("--iters", iters, "inference iteration count");
    c_et->add_option("--betas", betas, "comma-separated explicit scales");

    CLI::App* c_ee = app.add_subcommand("exit-eval", "sweep entropy thresholds for early exit");
    add_common(c_ee, common, true);
    c_ee->add_option("--thresholds", thresholds, "comma-separated entropy thresholds (nats)");

    CLI::App* c_an = app.add_subcommand("analyze", "trajectory cosine and hidden-difference reports");
    add_common(c_an, common, true);
    c_an->add_option("--iters", iters_list, "comma-separated reduced iteration counts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        app.exit(e);
        return 1;
    }

    try {
        if (app.got_subcommand(c_ode)) return run_ode_verify(common);
        if (app.got_subcommand(c_pre)) return run_pretrain(common);
        if (app.got_subcommand(c_ft)) return run_finetune(common, freeze);
        if (app.got_subcommand(c_search)) return run_search(common, iters, budget);
        if (app.got_subcommand(c_infer)) return run_infer(common, iters, betas);
        if (app.got_subcommand(c_et)) return run_exit_train(common, iters, betas);
        if (app.got_subcommand(c_ee)) return run_exit_eval(common, thresholds);
        if (app.got_subcommand(c_an)) return run_analyze(common, iters_list);
        std::cerr << app.help() << std::endl;
        std::cerr << "error: expected a subcommand\n";
        return 1;
    } catch (const usage_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 2;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
