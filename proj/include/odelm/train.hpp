#pragma once

#include <optional>
#include <vector>

#include "odelm/checkpoint.hpp"
#include "odelm/corpus.hpp"

namespace odelm {

// Decoupled-weight-decay Adam. Moments in float64; decay applies to weight
// matrices only (2-d tensors), not biases or layer-norm parameters.
struct AdamW {
    std::vector<Tensor*> params;
    std::vector<std::vector<double>> m, v;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int t = 0;

    explicit AdamW(std::vector<Tensor*> params);
    void step(double lr, double weight_decay);
};

// Piecewise schedule: linear warmup to peak_lr, then linear or cosine decay to min_lr.
double lr_at(const TrainConfig& tc, int step);

// Scales all grads so the global norm is at most max_norm; returns the pre-clip norm.
double clip_gradients(const std::vector<Tensor*>& params, double max_norm);

struct TrainLogRow {
    int step;
    double lr, loss, grad_norm;
};

Checkpoint pretrain(ModelConfig config, const Corpus& corpus, const TrainConfig& tc,
                    std::vector<TrainLogRow>* log = nullptr);

// Fine-tuned backbone plus a linear classification head on the pooled final
// state (last position for causal-lm, first for masked-lm).
struct Classifier {
    Checkpoint ckpt;
    Tensor head_w, head_b;
    int num_classes = 2;
    std::string task;
    double valid_accuracy = 0.0;

    Checkpoint to_checkpoint() const;
    static Classifier from_checkpoint(Checkpoint base);
};

Classifier finetune_classifier(const Checkpoint& base, const TaskDataset& data, const TrainConfig& tc,
                               bool freeze_backbone = false, std::vector<TrainLogRow>* log = nullptr);

// Head logits [1, num_classes] for one example under the given schedule.
Tensor classifier_logits(Classifier& clf, const std::vector<int>& tokens, const StepSchedule& schedule,
                         ForwardResult* fwd_out = nullptr);

double classifier_accuracy(Classifier& clf, const std::vector<LabeledExample>& examples,
                           const StepSchedule& schedule);

int pooled_position(Objective objective, int seq_len);

// Zero-shot perplexity exp(mean NLL) over non-overlapping windows of eval tokens.
double evaluate_perplexity(Checkpoint& ckpt, const StepSchedule& schedule,
                           const std::vector<int>& tokens, int seq_len, int max_windows = 0);

// Trajectories for a batch of fixed windows, for the diagnostics module.
std::vector<Trajectory> collect_trajectories(Checkpoint& ckpt, const StepSchedule& schedule,
                                             const std::vector<int>& tokens, int seq_len,
                                             int max_windows);

}  // namespace odelm
