#include "odelm/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "odelm/errors.hpp"
#include "odelm/rng.hpp"

namespace odelm {

AdamW::AdamW(std::vector<Tensor*> params_) : params(std::move(params_)) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (Tensor* p : params) {
        p->ensure_grad();
        m.emplace_back(p->numel(), 0.0);
        v.emplace_back(p->numel(), 0.0);
    }
}

void AdamW::step(double lr, double weight_decay) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor* p = params[k];
        const bool decay = weight_decay > 0.0 && p->shape.size() == 2;
        for (std::size_t i = 0; i < p->numel(); ++i) {
            const double g = (*p->grad)[i];
            m[k][i] = beta1 * m[k][i] + (1.0 - beta1) * g;
            v[k][i] = beta2 * v[k][i] + (1.0 - beta2) * g * g;
            double update = (m[k][i] / bc1) / (std::sqrt(v[k][i] / bc2) + eps);
            if (decay) update += weight_decay * (*p->data)[i];
            (*p->data)[i] -= lr * update;
        }
    }
}

double lr_at(const TrainConfig& tc, int step) {
    const int warmup = std::max(1, static_cast<int>(std::lround(tc.warmup_ratio * tc.steps)));
    if (step < warmup) return tc.peak_lr * (step + 1) / warmup;
    const int last = tc.steps - 1;
    if (last <= warmup - 1) return tc.peak_lr;
    const double u = static_cast<double>(step - (warmup - 1)) / (last - (warmup - 1));
    if (tc.decay == TrainConfig::Decay::linear) return tc.peak_lr + (tc.min_lr - tc.peak_lr) * u;
    return tc.min_lr + (tc.peak_lr - tc.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * u));
}

double clip_gradients(const std::vector<Tensor*>& params, double max_norm) {
    double sq = 0.0;
    for (Tensor* p : params)
        for (double g : *p->grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (Tensor* p : params)
            for (double& g : *p->grad) g *= s;
    }
    return norm;
}

namespace {

struct LmBatchItem {
    std::vector<int> inputs;
    std::vector<int> targets;  // -1 at unpredicted positions
};

std::vector<LmBatchItem> sample_lm_batch(const std::vector<int>& stream, const ModelConfig& cfg,
                                         const TrainConfig& tc, uint64_t step_index) {
    if (stream.size() < static_cast<std::size_t>(tc.seq_len) + 1)
        throw data_error("corpus split shorter than seq_len+1");
    auto rng = substream(tc.seed, "batch", step_index);
    std::uniform_int_distribution<std::size_t> offset(0, stream.size() - tc.seq_len - 1);
    std::vector<LmBatchItem> batch;
    for (int b = 0; b < tc.batch; ++b) {
        std::size_t o = offset(rng);
        LmBatchItem item;
        item.inputs.assign(stream.begin() + o, stream.begin() + o + tc.seq_len);
        if (cfg.objective == Objective::causal_lm) {
            item.targets.assign(stream.begin() + o + 1, stream.begin() + o + tc.seq_len + 1);
        } else {
            item.targets.assign(tc.seq_len, -1);
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            bool any = false;
            for (int i = 0; i < tc.seq_len; ++i)
                if (unif(rng) < 0.15) {
                    item.targets[i] = item.inputs[i];
                    item.inputs[i] = Corpus::kMaskId;
                    any = true;
                }
            if (!any) {  // always predict something
                item.targets[0] = item.inputs[0];
                item.inputs[0] = Corpus::kMaskId;
            }
        }
        batch.push_back(std::move(item));
    }
    return batch;
}

}  // namespace

Checkpoint pretrain(ModelConfig config, const Corpus& corpus, const TrainConfig& tc,
                    std::vector<TrainLogRow>* log) {
    tc.validate();
    if (config.vocab_size == 0) config.vocab_size = corpus.vocab_size();
    if (config.vocab_size < corpus.vocab_size())
        throw config_error("pretrain: model vocab smaller than corpus vocab");
    config.validate();

    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.train_config = tc;
    ckpt.corpus_id = corpus.id;
    ckpt.bank = ParameterBank::init(config, tc.seed);

    AdamW opt(ckpt.bank.params());
    const std::vector<int> stream = corpus.train_tokens();
    double last_loss = 0.0;
    for (int step = 0; step < tc.steps; ++step) {
        auto batch = sample_lm_batch(stream, config, tc, static_cast<uint64_t>(step));
        ckpt.bank.zero_grads();
        Tensor total;
        StepSchedule unit = StepSchedule::uniform(config.layers, config.step_size);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            ForwardResult fwd = forward(ckpt.bank, batch[b].inputs, unit, config, false);
            Tensor loss = lm_loss(fwd.logits, batch[b].targets);
            total = b == 0 ? loss : ops::add(total, loss);
        }
        Tensor mean_loss = ops::scale(total, 1.0 / batch.size());
        last_loss = mean_loss.item();
        if (!std::isfinite(last_loss))
            throw numeric_error("pretrain: loss diverged at step " + std::to_string(step));
        backward(mean_loss);
        double gnorm = clip_gradients(opt.params, tc.grad_clip);
        double lr = lr_at(tc, step);
        opt.step(lr, tc.weight_decay);
        if (log && (step % tc.log_every == 0 || step == tc.steps - 1))
            log->push_back({step, lr, last_loss, gnorm});
    }
    ckpt.final_train_loss = last_loss;
    return ckpt;
}

int pooled_position(Objective objective, int seq_len) {
    return objective == Objective::causal_lm ? seq_len - 1 : 0;
}

Checkpoint Classifier::to_checkpoint() const {
    Checkpoint out = ckpt;
    out.extras["task"] = task;
    out.extras["num_classes"] = std::to_string(num_classes);
    out.extra_tensors.clear();
    out.extra_tensors.emplace_back("head_w", head_w);
    out.extra_tensors.emplace_back("head_b", head_b);
    for (const auto& [name, t] : ckpt.extra_tensors)
        if (name != "head_w" && name != "head_b") out.extra_tensors.emplace_back(name, t);
    return out;
}

Classifier Classifier::from_checkpoint(Checkpoint base) {
    Classifier clf;
    const Tensor* w = base.find_extra("head_w");
    const Tensor* b = base.find_extra("head_b");
    if (!w || !b) throw data_error("checkpoint has no classifier head tensors");
    clf.head_w = *w;
    clf.head_b = *b;
    auto it = base.extras.find("num_classes");
    clf.num_classes = it == base.extras.end() ? clf.head_w.cols() : std::stoi(it->second);
    auto jt = base.extras.find("task");
    clf.task = jt == base.extras.end() ? "" : jt->second;
    clf.ckpt = std::move(base);
    return clf;
}

Tensor classifier_logits(Classifier& clf, const std::vector<int>& tokens, const StepSchedule& schedule,
                         ForwardResult* fwd_out) {
    ForwardResult fwd = forward(clf.ckpt.bank, tokens, schedule, clf.ckpt.config, fwd_out != nullptr);
    Tensor normed = ops::layer_norm(fwd.final_state, clf.ckpt.bank.final_ln_gain,
                                    clf.ckpt.bank.final_ln_bias);
    int pos = pooled_position(clf.ckpt.config.objective, static_cast<int>(tokens.size()));
    Tensor logits = ops::linear(ops::slice_rows(normed, pos, 1), clf.head_w, clf.head_b);
    if (fwd_out) *fwd_out = std::move(fwd);
    return logits;
}

Classifier finetune_classifier(const Checkpoint& base, const TaskDataset& data, const TrainConfig& tc,
                               bool freeze_backbone, std::vector<TrainLogRow>* log) {
    tc.validate();
    if (data.train.empty() || data.valid.empty()) throw data_error("finetune: empty dataset");
    for (const auto& ex : data.train)
        if (ex.label < 0 || ex.label >= data.num_classes)
            throw data_error("finetune: label " + std::to_string(ex.label) + " outside range");

    Classifier clf;
    clf.ckpt = base.clone();
    clf.task = data.name;
    clf.num_classes = data.num_classes;
    auto rng = substream(tc.seed, "head_init");
    std::normal_distribution<double> dist(0.0, 0.02);
    clf.head_w = Tensor::zeros({base.config.d_model, data.num_classes}, true);
    for (double& v : *clf.head_w.data) v = dist(rng);
    clf.head_b = Tensor::zeros({data.num_classes}, true);

    std::vector<Tensor*> trainable = {&clf.head_w, &clf.head_b};
    if (!freeze_backbone) {
        clf.ckpt.bank.set_requires_grad(true);
        for (Tensor* p : clf.ckpt.bank.params()) trainable.push_back(p);
    } else {
        clf.ckpt.bank.set_requires_grad(false);
    }

    AdamW opt(trainable);
    StepSchedule unit = StepSchedule::uniform(base.config.layers, base.config.step_size);
    for (int step = 0; step < tc.steps; ++step) {
        auto brng = substream(tc.seed, "finetune_batch", static_cast<uint64_t>(step));
        std::uniform_int_distribution<std::size_t> pick(0, data.train.size() - 1);
        for (Tensor* p : trainable) p->zero_grad();
        Tensor total;
        for (int b = 0; b < tc.batch; ++b) {
            const LabeledExample& ex = data.train[pick(brng)];
            Tensor logits = classifier_logits(clf, ex.tokens, unit);
            Tensor loss = ops::cross_entropy(logits, {ex.label});
            total = b == 0 ? loss : ops::add(total, loss);
        }
        Tensor mean_loss = ops::scale(total, 1.0 / tc.batch);
        if (!std::isfinite(mean_loss.item()))
            throw numeric_error("finetune: loss diverged at step " + std::to_string(step));
        backward(mean_loss);
        double gnorm = clip_gradients(trainable, tc.grad_clip);
        double lr = lr_at(tc, step);
        opt.step(lr, tc.weight_decay);
        if (log && (step % tc.log_every == 0 || step == tc.steps - 1))
            log->push_back({step, lr, mean_loss.item(), gnorm});
    }
    clf.ckpt.bank.set_requires_grad(true);
    clf.valid_accuracy = classifier_accuracy(clf, data.valid, unit);
    return clf;
}

double classifier_accuracy(Classifier& clf, const std::vector<LabeledExample>& examples,
                           const StepSchedule& schedule) {
    if (examples.empty()) throw data_error("classifier_accuracy: empty eval set");
    NoGradGuard ng;
    int correct = 0;
    for (const auto& ex : examples) {
        Tensor logits = classifier_logits(clf, ex.tokens, schedule);
        int best = 0;
        for (int j = 1; j < clf.num_classes; ++j)
            if (logits.at(0, j) > logits.at(0, best)) best = j;
        correct += best == ex.label;
    }
    return static_cast<double>(correct) / examples.size();
}

namespace {

std::vector<std::vector<int>> eval_windows(const std::vector<int>& tokens, int seq_len, int max_windows) {
    if (tokens.size() < static_cast<std::size_t>(seq_len) + 1)
        throw data_error("evaluation stream shorter than seq_len+1");
    std::vector<std::vector<int>> windows;
    for (std::size_t o = 0; o + seq_len + 1 <= tokens.size(); o += seq_len) {
        windows.emplace_back(tokens.begin() + o, tokens.begin() + o + seq_len + 1);
        if (max_windows > 0 && static_cast<int>(windows.size()) >= max_windows) break;
    }
    return windows;
}

}  // namespace

double evaluate_perplexity(Checkpoint& ckpt, const StepSchedule& schedule,
                           const std::vector<int>& tokens, int seq_len, int max_windows) {
    NoGradGuard ng;
    double total_nll = 0.0;
    std::size_t count = 0;
    for (const auto& w : eval_windows(tokens, seq_len, max_windows)) {
        std::vector<int> inputs(w.begin(), w.end() - 1);
        std::vector<int> targets(w.begin() + 1, w.end());
        ForwardResult fwd = forward(ckpt.bank, inputs, schedule, ckpt.config, false);
        total_nll += lm_loss(fwd.logits, targets).item() * inputs.size();
        count += inputs.size();
    }
    return std::exp(total_nll / count);
}

std::vector<Trajectory> collect_trajectories(Checkpoint& ckpt, const StepSchedule& schedule,
                                             const std::vector<int>& tokens, int seq_len,
                                             int max_windows) {
    NoGradGuard ng;
    std::vector<Trajectory> out;
    for (const auto& w : eval_windows(tokens, seq_len, max_windows)) {
        std::vector<int> inputs(w.begin(), w.end() - 1);
        out.push_back(forward(ckpt.bank, inputs, schedule, ckpt.config, true).trajectory);
    }
    return out;
}

}  // namespace odelm
