#include "odelm/checkpoint.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "odelm/errors.hpp"

namespace odelm {

void TrainConfig::validate() const {
    if (steps < 1 || batch < 1 || seq_len < 1) throw config_error("train config: steps/batch/seq_len must be positive");
    if (warmup_ratio < 0.0 || warmup_ratio > 1.0) throw config_error("train config: warmup_ratio must be in [0,1]");
    if (!(peak_lr > min_lr) || min_lr < 0.0) throw config_error("train config: need peak_lr > min_lr >= 0");
    if (grad_clip <= 0.0) throw config_error("train config: grad_clip must be positive");
}

std::string decay_name(TrainConfig::Decay d) {
    return d == TrainConfig::Decay::linear ? "linear" : "cosine";
}

TrainConfig::Decay decay_from_name(const std::string& name) {
    if (name == "linear") return TrainConfig::Decay::linear;
    if (name == "cosine") return TrainConfig::Decay::cosine;
    throw config_error("unknown decay style '" + name + "'");
}

namespace {

// Hexfloat text keeps double-valued manifest fields bit-exact across a round trip.
std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

double parse_double(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

using Manifest = std::map<std::string, std::string>;

std::string need(const Manifest& m, const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) throw data_error("checkpoint: missing manifest key '" + key + "'");
    return it->second;
}

struct TensorEntry {
    std::string name;
    std::vector<int> shape;
    std::size_t offset;
};

}  // namespace

void Checkpoint::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("checkpoint: cannot open '" + path + "' for writing");

    Manifest m;
    m["format"] = "1";
    m["layers"] = std::to_string(config.layers);
    m["step_size"] = fmt_double(config.step_size);
    m["param_sets"] = std::to_string(config.param_sets);
    m["d_model"] = std::to_string(config.d_model);
    m["n_heads"] = std::to_string(config.n_heads);
    m["d_ff"] = std::to_string(config.d_ff);
    m["vocab_size"] = std::to_string(config.vocab_size);
    m["max_seq_len"] = std::to_string(config.max_seq_len);
    m["objective"] = objective_name(config.objective);
    m["train.steps"] = std::to_string(train_config.steps);
    m["train.batch"] = std::to_string(train_config.batch);
    m["train.seq_len"] = std::to_string(train_config.seq_len);
    m["train.peak_lr"] = fmt_double(train_config.peak_lr);
    m["train.min_lr"] = fmt_double(train_config.min_lr);
    m["train.warmup_ratio"] = fmt_double(train_config.warmup_ratio);
    m["train.decay"] = decay_name(train_config.decay);
    m["train.weight_decay"] = fmt_double(train_config.weight_decay);
    m["train.grad_clip"] = fmt_double(train_config.grad_clip);
    m["train.seed"] = std::to_string(train_config.seed);
    m["train.log_every"] = std::to_string(train_config.log_every);
    m["corpus"] = corpus_id;
    m["final_train_loss"] = fmt_double(final_train_loss);
    for (const auto& [k, v] : extras) m["extra." + k] = v;

    std::vector<std::pair<std::string, const Tensor*>> tensors;
    for (auto& [name, t] : const_cast<Checkpoint*>(this)->bank.named_params()) tensors.emplace_back(name, t);
    for (const auto& [name, t] : extra_tensors) tensors.emplace_back("x." + name, &t);

    out << kCheckpointMagic << "\n";
    out << "manifest " << m.size() << "\n";
    for (const auto& [k, v] : m) out << k << "=" << v << "\n";
    out << "tensors " << tensors.size() << "\n";
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        out << name << " " << t->shape.size();
        for (int d : t->shape) out << " " << d;
        out << " " << offset << "\n";
        offset += t->numel() * sizeof(double);
    }
    out << "blob " << offset << "\n";
    for (const auto& [name, t] : tensors)
        out.write(reinterpret_cast<const char*>(t->data->data()),
                  static_cast<std::streamsize>(t->numel() * sizeof(double)));
    if (!out) throw data_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("checkpoint: cannot open '" + path + "'");
    std::string line;
    std::getline(in, line);
    if (line != kCheckpointMagic) throw data_error("checkpoint: bad magic in '" + path + "'");

    std::getline(in, line);
    std::size_t manifest_count = 0;
    if (std::sscanf(line.c_str(), "manifest %zu", &manifest_count) != 1)
        throw data_error("checkpoint: malformed manifest header");
    Manifest m;
    for (std::size_t i = 0; i < manifest_count; ++i) {
        std::getline(in, line);
        auto eq = line.find('=');
        if (eq == std::string::npos) throw data_error("checkpoint: malformed manifest line '" + line + "'");
        m[line.substr(0, eq)] = line.substr(eq + 1);
    }

    Checkpoint ckpt;
    ckpt.config.layers = std::stoi(need(m, "layers"));
    ckpt.config.step_size = parse_double(need(m, "step_size"));
    ckpt.config.param_sets = std::stoi(need(m, "param_sets"));
    ckpt.config.d_model = std::stoi(need(m, "d_model"));
    ckpt.config.n_heads = std::stoi(need(m, "n_heads"));
    ckpt.config.d_ff = std::stoi(need(m, "d_ff"));
    ckpt.config.vocab_size = std::stoi(need(m, "vocab_size"));
    ckpt.config.max_seq_len = std::stoi(need(m, "max_seq_len"));
    ckpt.config.objective = objective_from_name(need(m, "objective"));
    ckpt.train_config.steps = std::stoi(need(m, "train.steps"));
    ckpt.train_config.batch = std::stoi(need(m, "train.batch"));
    ckpt.train_config.seq_len = std::stoi(need(m, "train.seq_len"));
    ckpt.train_config.peak_lr = parse_double(need(m, "train.peak_lr"));
    ckpt.train_config.min_lr = parse_double(need(m, "train.min_lr"));
    ckpt.train_config.warmup_ratio = parse_double(need(m, "train.warmup_ratio"));
    ckpt.train_config.decay = decay_from_name(need(m, "train.decay"));
    ckpt.train_config.weight_decay = parse_double(need(m, "train.weight_decay"));
    ckpt.train_config.grad_clip = parse_double(need(m, "train.grad_clip"));
    ckpt.train_config.seed = std::stoull(need(m, "train.seed"));
    ckpt.train_config.log_every = std::stoi(need(m, "train.log_every"));
    ckpt.corpus_id = need(m, "corpus");
    ckpt.final_train_loss = parse_double(need(m, "final_train_loss"));
    for (const auto& [k, v] : m)
        if (k.rfind("extra.", 0) == 0) ckpt.extras[k.substr(6)] = v;

    std::getline(in, line);
    std::size_t tensor_count = 0;
    if (std::sscanf(line.c_str(), "tensors %zu", &tensor_count) != 1)
        throw data_error("checkpoint: malformed tensor index header");
    std::vector<TensorEntry> entries(tensor_count);
    for (auto& e : entries) {
        std::getline(in, line);
        std::istringstream ls(line);
        std::size_t ndim;
        ls >> e.name >> ndim;
        e.shape.resize(ndim);
        for (auto& d : e.shape) ls >> d;
        ls >> e.offset;
        if (!ls) throw data_error("checkpoint: malformed tensor index line '" + line + "'");
    }

    std::getline(in, line);
    std::size_t blob_size = 0;
    if (std::sscanf(line.c_str(), "blob %zu", &blob_size) != 1)
        throw data_error("checkpoint: malformed blob header");
    std::vector<char> blob(blob_size);
    in.read(blob.data(), static_cast<std::streamsize>(blob_size));
    if (in.gcount() != static_cast<std::streamsize>(blob_size))
        throw data_error("checkpoint: truncated blob in '" + path + "'");

    ckpt.bank = ParameterBank::init(ckpt.config, 0);
    auto named = ckpt.bank.named_params();
    std::map<std::string, Tensor*> by_name;
    for (auto& [name, t] : named) by_name[name] = t;

    for (const auto& e : entries) {
        Tensor t = Tensor::zeros(e.shape);
        if (e.offset + t.numel() * sizeof(double) > blob_size)
            throw data_error("checkpoint: tensor '" + e.name + "' overruns blob");
        std::memcpy(t.data->data(), blob.data() + e.offset, t.numel() * sizeof(double));
        if (e.name.rfind("x.", 0) == 0) {
            ckpt.extra_tensors.emplace_back(e.name.substr(2), std::move(t));
        } else {
            auto it = by_name.find(e.name);
            if (it == by_name.end()) throw data_error("checkpoint: unknown tensor '" + e.name + "'");
            if (it->second->shape != t.shape)
                throw data_error("checkpoint: shape mismatch for tensor '" + e.name + "'");
            *it->second->data = *t.data;
            by_name.erase(it);
        }
    }
    if (!by_name.empty())
        throw data_error("checkpoint: tensor '" + by_name.begin()->first + "' missing from file");
    return ckpt;
}

Checkpoint Checkpoint::clone() const {
    Checkpoint out;
    out.config = config;
    out.train_config = train_config;
    out.corpus_id = corpus_id;
    out.final_train_loss = final_train_loss;
    out.extras = extras;
    out.bank = ParameterBank::init(config, 0);
    auto src = const_cast<Checkpoint*>(this)->bank.named_params();
    auto dst = out.bank.named_params();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second->data = *src[i].second->data;
    for (const auto& [name, t] : extra_tensors) {
        Tensor copy = t.detached_copy();
        copy.requires_grad = t.requires_grad;
        if (copy.requires_grad) copy.ensure_grad();
        out.extra_tensors.emplace_back(name, std::move(copy));
    }
    return out;
}

const Tensor* Checkpoint::find_extra(const std::string& name) const {
    for (const auto& [n, t] : extra_tensors)
        if (n == name) return &t;
    return nullptr;
}

}  // namespace odelm
