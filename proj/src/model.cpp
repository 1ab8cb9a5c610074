#include "odelm/model.hpp"

#include <cmath>

#include "odelm/errors.hpp"
#include "odelm/rng.hpp"

namespace odelm {

std::string objective_name(Objective o) {
    return o == Objective::causal_lm ? "causal-lm" : "masked-lm";
}

Objective objective_from_name(const std::string& name) {
    if (name == "causal-lm") return Objective::causal_lm;
    if (name == "masked-lm") return Objective::masked_lm;
    throw config_error("unknown objective '" + name + "'");
}

void ModelConfig::validate() const {
    if (layers < 1) throw config_error("config: layers must be >= 1");
    if (step_size <= 0.0) throw config_error("config: step size must be positive");
    if (param_sets < 1 || param_sets > layers)
        throw config_error("config: param_sets must be in [1, layers]");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
        throw config_error("config: d_model must be a positive multiple of n_heads");
    if (d_ff < 1) throw config_error("config: d_ff must be positive");
    if (vocab_size < 2) throw config_error("config: vocab_size must be >= 2");
    if (max_seq_len < 1) throw config_error("config: max_seq_len must be positive");
}

std::vector<Tensor*> BlockParams::all() {
    return {&ln1_gain, &ln1_bias, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo,
            &ln2_gain, &ln2_bias, &w1, &b1, &w2, &b2};
}

std::vector<const Tensor*> BlockParams::all() const {
    return {&ln1_gain, &ln1_bias, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo,
            &ln2_gain, &ln2_bias, &w1, &b1, &w2, &b2};
}

const std::vector<std::string>& BlockParams::tensor_names() {
    static const std::vector<std::string> names = {
        "ln1_gain", "ln1_bias", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
        "ln2_gain", "ln2_bias", "w1", "b1", "w2", "b2"};
    return names;
}

namespace {

Tensor randn(std::vector<int> shape, double std_dev, std::mt19937_64& rng) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    std::normal_distribution<double> dist(0.0, std_dev);
    for (double& v : *t.data) v = dist(rng);
    return t;
}

}  // namespace

ParameterBank ParameterBank::init(const ModelConfig& config, uint64_t seed) {
    config.validate();
    const int d = config.d_model, ff = config.d_ff;
    const double std_dev = 0.02;
    // residual output projections scaled down with depth, GPT-2 style
    const double out_std = std_dev / std::sqrt(2.0 * config.layers);

    ParameterBank bank;
    auto rng = substream(seed, "init");
    for (int b = 0; b < config.param_sets; ++b) {
        BlockParams p;
        p.ln1_gain = Tensor::full({d}, 1.0, true);
        p.ln1_bias = Tensor::zeros({d}, true);
        p.wq = randn({d, d}, std_dev, rng);
        p.bq = Tensor::zeros({d}, true);
        p.wk = randn({d, d}, std_dev, rng);
        p.bk = Tensor::zeros({d}, true);
        p.wv = randn({d, d}, std_dev, rng);
        p.bv = Tensor::zeros({d}, true);
        p.wo = randn({d, d}, out_std, rng);
        p.bo = Tensor::zeros({d}, true);
        p.ln2_gain = Tensor::full({d}, 1.0, true);
        p.ln2_bias = Tensor::zeros({d}, true);
        p.w1 = randn({d, ff}, std_dev, rng);
        p.b1 = Tensor::zeros({ff}, true);
        p.w2 = randn({ff, d}, out_std, rng);
        p.b2 = Tensor::zeros({d}, true);
        bank.blocks.push_back(std::move(p));
    }
    bank.tok_embed = randn({config.vocab_size, d}, std_dev, rng);
    bank.pos_embed = randn({config.max_seq_len, d}, std_dev, rng);
    bank.final_ln_gain = Tensor::full({d}, 1.0, true);
    bank.final_ln_bias = Tensor::zeros({d}, true);
    return bank;
}

std::vector<std::pair<std::string, Tensor*>> ParameterBank::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        auto tensors = blocks[b].all();
        const auto& names = BlockParams::tensor_names();
        for (std::size_t i = 0; i < tensors.size(); ++i)
            out.emplace_back("block" + std::to_string(b) + "." + names[i], tensors[i]);
    }
    out.emplace_back("tok_embed", &tok_embed);
    out.emplace_back("pos_embed", &pos_embed);
    out.emplace_back("final_ln_gain", &final_ln_gain);
    out.emplace_back("final_ln_bias", &final_ln_bias);
    return out;
}

std::vector<Tensor*> ParameterBank::params() {
    std::vector<Tensor*> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
}

void ParameterBank::zero_grads() {
    for (Tensor* t : params()) t->zero_grad();
}

void ParameterBank::set_requires_grad(bool on) {
    for (Tensor* t : params()) {
        t->requires_grad = on;
        if (on) t->ensure_grad();
    }
}

BlockParams interpolate_params(ParameterBank& bank, double t, const ModelConfig& config) {
    if (t < 0.0) throw std::domain_error("interpolate_params: negative time");
    const int n = config.param_sets;
    if (static_cast<int>(bank.blocks.size()) != n)
        throw config_error("interpolate_params: bank holds " + std::to_string(bank.blocks.size()) +
                           " sets, config says " + std::to_string(n));
    if (n == 1) return bank.blocks[0];

    const double span = (config.layers - 1) * config.step_size;
    if (t >= span) return bank.blocks[n - 1];  // clamp past the last stored set

    const double delta = span / (n - 1);
    const double u = t / delta;
    const double rounded = std::round(u);
    if (std::abs(u - rounded) < 1e-12) {
        int k = std::min(static_cast<int>(rounded), n - 1);
        return bank.blocks[k];
    }
    const int l = std::min(static_cast<int>(std::floor(u)), n - 1);
    const int r = std::min(l + 1, n - 1);
    const double w = u - l;

    BlockParams out;
    auto dst = out.all();
    auto left = bank.blocks[l].all();
    auto right = bank.blocks[r].all();
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = ops::lerp(*left[i], *right[i], w);
    return out;
}

namespace {

Tensor feed_forward(const BlockParams& p, const Tensor& x) {
    return ops::linear(ops::gelu(ops::linear(x, p.w1, p.b1)), p.w2, p.b2);
}

Tensor attention_branch(const BlockParams& p, const Tensor& h, int n_heads, bool causal) {
    return ops::attention(ops::layer_norm(h, p.ln1_gain, p.ln1_bias), p.wq, p.bq, p.wk, p.bk, p.wv,
                          p.bv, p.wo, p.bo, n_heads, causal);
}

}  // namespace

Tensor block_derivative(const BlockParams& p, const Tensor& h, int n_heads, bool causal) {
    // f(h) = ATT(LN1(h)) + FFN(LN2(h + ATT(LN1(h))))
    Tensor att = attention_branch(p, h, n_heads, causal);
    Tensor x = ops::add(h, att);
    return ops::add(att, feed_forward(p, ops::layer_norm(x, p.ln2_gain, p.ln2_bias)));
}

Tensor pre_norm_block(const BlockParams& p, const Tensor& h, int n_heads, bool causal) {
    Tensor x = ops::add(attention_branch(p, h, n_heads, causal), h);
    return ops::add(feed_forward(p, ops::layer_norm(x, p.ln2_gain, p.ln2_bias)), x);
}

ForwardResult forward(ParameterBank& bank, const std::vector<int>& tokens,
                      const StepSchedule& schedule, const ModelConfig& config,
                      bool record_trajectory, const Tensor* resume_state, double resume_time) {
    config.validate();
    const int seq = static_cast<int>(tokens.size());
    if (seq < 1) throw data_error("forward: empty token sequence");
    if (seq > config.max_seq_len)
        throw config_error("forward: sequence length " + std::to_string(seq) + " exceeds max " +
                           std::to_string(config.max_seq_len));
    for (int id : tokens)
        if (id < 0 || id >= config.vocab_size)
            throw data_error("forward: token id " + std::to_string(id) + " outside vocab");

    const double total = config.total_time();
    if (std::abs(resume_time + schedule.duration() - total) > 0.5 * schedule.base_step + 1e-12)
        throw config_error("forward: schedule covers " +
                           std::to_string(resume_time + schedule.duration()) +
                           " of total time " + std::to_string(total));

    const bool causal = config.objective == Objective::causal_lm;
    const double param_span = (config.layers - 1) * config.step_size;

    Tensor h;
    if (resume_state) {
        h = *resume_state;
    } else {
        h = ops::add(ops::embedding(bank.tok_embed, tokens), ops::slice_rows(bank.pos_embed, 0, seq));
    }

    ForwardResult res;
    res.trajectory.schedule = schedule;
    double t = resume_time;
    if (record_trajectory) {
        res.trajectory.states.push_back(h.detached_copy());
        res.trajectory.times.push_back(t);
    }
    for (int i = 0; i < schedule.iters(); ++i) {
        BlockParams p = interpolate_params(bank, std::min(t, param_span), config);
        Tensor f = block_derivative(p, h, config.n_heads, causal);
        h = ops::add_scaled(h, f, schedule.scales[i] * schedule.base_step);
        if (!h.all_finite())
            throw numeric_error("forward: non-finite hidden state at iteration " + std::to_string(i));
        t += schedule.scales[i] * schedule.base_step;
        if (record_trajectory) {
            res.trajectory.derivs.push_back(f.detached_copy());
            res.trajectory.states.push_back(h.detached_copy());
            res.trajectory.times.push_back(t);
        }
    }
    res.final_state = h;
    res.logits = ops::matmul_nt(ops::layer_norm(h, bank.final_ln_gain, bank.final_ln_bias),
                                bank.tok_embed);
    return res;
}

Tensor lm_loss(const Tensor& logits, const std::vector<int>& targets) {
    return ops::cross_entropy(logits, targets);
}

}  // namespace odelm
