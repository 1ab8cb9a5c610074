#pragma once

#include <map>
#include <string>
#include <vector>

#include "odelm/model.hpp"

namespace odelm {

struct TrainConfig {
    int steps = 200;
    int batch = 8;
    int seq_len = 64;
    double peak_lr = 1e-3;
    double min_lr = 1e-4;
    double warmup_ratio = 0.05;
    enum class Decay { linear, cosine } decay = Decay::linear;
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    uint64_t seed = 0;
    int log_every = 10;

    void validate() const;
};

std::string decay_name(TrainConfig::Decay d);
TrainConfig::Decay decay_from_name(const std::string& name);

// Serialized model: text manifest, tensor index of (name, shape, byte offset),
// then one raw little-endian float64 blob per tensor. Round-trips bit-exactly.
struct Checkpoint {
    ModelConfig config;
    ParameterBank bank;
    TrainConfig train_config;
    std::string corpus_id;
    double final_train_loss = 0.0;

    // Attachments (classifier heads etc.) ride along as named tensors plus
    // free-form manifest entries.
    std::map<std::string, std::string> extras;
    std::vector<std::pair<std::string, Tensor>> extra_tensors;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    // Deep copy: fresh tensor storage, so training the copy leaves the original intact.
    Checkpoint clone() const;

    const Tensor* find_extra(const std::string& name) const;
};

inline constexpr const char* kCheckpointMagic = "odelm-checkpoint v1";

}  // namespace odelm
