#include "odelm/early_exit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "odelm/errors.hpp"
#include "odelm/rng.hpp"

namespace odelm {

double shannon_entropy_nats(const std::vector<double>& probs) {
    double h = 0.0;
    for (double p : probs)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

namespace {

// pooled hidden-state rows for every iteration boundary of one example
std::vector<Tensor> boundary_features(Classifier& clf, const std::vector<int>& tokens,
                                      const StepSchedule& schedule) {
    NoGradGuard ng;
    ForwardResult fwd = forward(clf.ckpt.bank, tokens, schedule, clf.ckpt.config, true);
    const int pos = pooled_position(clf.ckpt.config.objective, static_cast<int>(tokens.size()));
    std::vector<Tensor> feats;
    for (std::size_t i = 1; i < fwd.trajectory.states.size(); ++i)
        feats.push_back(ops::slice_rows(fwd.trajectory.states[i], pos, 1).detached_copy());
    return feats;
}

std::vector<double> head_probs(const ExitHeads& heads, int boundary, const Tensor& feat) {
    Tensor logits = ops::linear(feat, heads.weights[boundary], heads.biases[boundary]);
    Tensor probs = ops::softmax_rows(logits);
    return *probs.data;
}

int argmax(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

ExitHeads train_exit_heads(Classifier& clf, const StepSchedule& schedule, const TaskDataset& data,
                           const TrainConfig& tc, std::vector<TrainLogRow>* log) {
    tc.validate();
    schedule.validate();
    if (data.train.empty()) throw data_error("train_exit_heads: empty dataset");
    const int iters = schedule.iters();
    const int d = clf.ckpt.config.d_model;

    ExitHeads heads;
    heads.schedule = schedule;
    heads.num_classes = clf.num_classes;
    auto rng = substream(tc.seed, "exit_head_init");
    std::normal_distribution<double> dist(0.0, 0.02);
    std::vector<Tensor*> trainable;
    heads.weights.reserve(iters);
    heads.biases.reserve(iters);
    for (int i = 0; i < iters; ++i) {
        Tensor w = Tensor::zeros({d, clf.num_classes}, true);
        for (double& v : *w.data) v = dist(rng);
        heads.weights.push_back(std::move(w));
        heads.biases.push_back(Tensor::zeros({clf.num_classes}, true));
        trainable.push_back(&heads.weights.back());
        trainable.push_back(&heads.biases.back());
    }

    // backbone frozen: features are computed once, heads never see the tape
    std::vector<std::vector<Tensor>> feats;
    feats.reserve(data.train.size());
    for (const auto& ex : data.train) feats.push_back(boundary_features(clf, ex.tokens, schedule));

    AdamW opt(trainable);
    for (int step = 0; step < tc.steps; ++step) {
        auto brng = substream(tc.seed, "exit_head_batch", static_cast<uint64_t>(step));
        std::uniform_int_distribution<std::size_t> pick(0, data.train.size() - 1);
        for (Tensor* p : trainable) p->zero_grad();
        Tensor total;
        bool first = true;
        for (int b = 0; b < tc.batch; ++b) {
            std::size_t e = pick(brng);
            // summed loss over all boundary classifiers
            for (int i = 0; i < iters; ++i) {
                Tensor logits = ops::linear(feats[e][i], heads.weights[i], heads.biases[i]);
                Tensor loss = ops::cross_entropy(logits, {data.train[e].label});
                total = first ? loss : ops::add(total, loss);
                first = false;
            }
        }
        Tensor mean_loss = ops::scale(total, 1.0 / tc.batch);
        if (!std::isfinite(mean_loss.item()))
            throw numeric_error("train_exit_heads: loss diverged at step " + std::to_string(step));
        backward(mean_loss);
        double gnorm = clip_gradients(trainable, tc.grad_clip);
        double lr = lr_at(tc, step);
        opt.step(lr, tc.weight_decay);
        if (log && (step % tc.log_every == 0 || step == tc.steps - 1))
            log->push_back({step, lr, mean_loss.item(), gnorm});
    }
    return heads;
}

ExitDecision infer_with_exit(Classifier& clf, const ExitHeads& heads, const ExitPolicy& policy,
                             const std::vector<int>& tokens) {
    if (policy.threshold < 0.0) throw config_error("exit policy: threshold must be >= 0");
    if (static_cast<int>(heads.weights.size()) != heads.schedule.iters())
        throw config_error("exit heads do not match their schedule");
    std::vector<Tensor> feats = boundary_features(clf, tokens, heads.schedule);
    const int iters = static_cast<int>(feats.size());
    for (int i = 0; i < iters; ++i) {
        std::vector<double> probs = head_probs(heads, i, feats[i]);
        if (i + 1 == iters || shannon_entropy_nats(probs) < policy.threshold)
            return {argmax(probs), i + 1};
    }
    throw state_error("infer_with_exit: unreachable");
}

std::vector<ExitStats> exit_sweep(Classifier& clf, const ExitHeads& heads,
                                  const std::vector<double>& thresholds,
                                  const std::vector<LabeledExample>& eval_set) {
    if (eval_set.empty()) throw data_error("exit_sweep: empty eval set");
    for (std::size_t i = 1; i < thresholds.size(); ++i)
        if (thresholds[i] <= thresholds[i - 1]) throw config_error("exit_sweep: thresholds must ascend");

    const int iters = heads.schedule.iters();
    // per example, per boundary: (entropy, prediction), computed once
    struct Row {
        std::vector<double> entropy;
        std::vector<int> pred;
        int label;
    };
    std::vector<Row> rows;
    for (const auto& ex : eval_set) {
        std::vector<Tensor> feats = boundary_features(clf, ex.tokens, heads.schedule);
        Row r;
        r.label = ex.label;
        for (int i = 0; i < iters; ++i) {
            std::vector<double> probs = head_probs(heads, i, feats[i]);
            r.entropy.push_back(shannon_entropy_nats(probs));
            r.pred.push_back(argmax(probs));
        }
        rows.push_back(std::move(r));
    }

    std::vector<ExitStats> out;
    for (double th : thresholds) {
        ExitStats st;
        st.threshold = th;
        int correct = 0;
        double iter_sum = 0.0;
        for (const Row& r : rows) {
            int exit_at = iters;
            for (int i = 0; i < iters; ++i)
                if (i + 1 == iters || r.entropy[i] < th) {
                    exit_at = i + 1;
                    break;
                }
            st.exit_indices.push_back(exit_at);
            iter_sum += exit_at;
            correct += r.pred[exit_at - 1] == r.label;
        }
        st.avg_iterations = iter_sum / rows.size();
        st.accuracy = static_cast<double>(correct) / rows.size();
        out.push_back(std::move(st));
    }
    return out;
}

void write_exit_sweep(const std::string& path, const std::vector<ExitStats>& stats) {
    std::ofstream out(path);
    if (!out) throw data_error("exit sweep: cannot open '" + path + "'");
    out << "threshold,avg_iterations,accuracy\n";
    for (const ExitStats& s : stats)
        out << s.threshold << "," << s.avg_iterations << "," << s.accuracy << "\n";
}

}  // namespace odelm
