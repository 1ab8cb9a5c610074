#pragma once

#include <vector>

#include "odelm/train.hpp"

namespace odelm {

// One linear classifier per iteration boundary of a fixed inference schedule,
// trained on a frozen fine-tuned backbone.
struct ExitHeads {
    std::vector<Tensor> weights;  // [d_model, classes] each
    std::vector<Tensor> biases;
    StepSchedule schedule;
    int num_classes = 2;
};

struct ExitPolicy {
    double threshold = 0.0;  // entropy cutoff in nats; strict inequality, 0 never exits early
};

struct ExitStats {
    double threshold = 0.0;
    double avg_iterations = 0.0;
    double accuracy = 0.0;
    std::vector<int> exit_indices;  // per example, 1-based iteration of exit
};

ExitHeads train_exit_heads(Classifier& clf, const StepSchedule& schedule, const TaskDataset& data,
                           const TrainConfig& tc, std::vector<TrainLogRow>* log = nullptr);

// Runs the backbone iteration by iteration; after iteration i the entropy of
// head i's softmax decides whether to halt. The final boundary always answers.
struct ExitDecision {
    int prediction = 0;
    int exit_index = 0;  // 1-based
};
ExitDecision infer_with_exit(Classifier& clf, const ExitHeads& heads, const ExitPolicy& policy,
                             const std::vector<int>& tokens);

std::vector<ExitStats> exit_sweep(Classifier& clf, const ExitHeads& heads,
                                  const std::vector<double>& thresholds,
                                  const std::vector<LabeledExample>& eval_set);

double shannon_entropy_nats(const std::vector<double>& probs);

// Appendix-style sweep CSV: threshold, avg_iterations, accuracy.
void write_exit_sweep(const std::string& path, const std::vector<ExitStats>& stats);

}  // namespace odelm
