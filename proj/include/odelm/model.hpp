#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "odelm/euler.hpp"
#include "odelm/ops.hpp"
#include "odelm/tensor.hpp"

namespace odelm {

enum class Objective { causal_lm, masked_lm };

std::string objective_name(Objective o);
Objective objective_from_name(const std::string& name);

struct ModelConfig {
    int layers = 2;          // L, iteration count at training
    double step_size = 1.0;  // s
    int param_sets = 1;      // n, 1 <= n <= L
    int d_model = 32;
    int n_heads = 2;
    int d_ff = 64;
    int vocab_size = 0;
    int max_seq_len = 64;
    Objective objective = Objective::causal_lm;

    double total_time() const { return layers * step_size; }
    void validate() const;  // throws config_error
};

// One set of pre-norm block parameters. `all()` enumerates tensors in a fixed
// order shared by interpolation, serialization and the optimizer.
struct BlockParams {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1, w2, b2;

    std::vector<Tensor*> all();
    std::vector<const Tensor*> all() const;
    static const std::vector<std::string>& tensor_names();
};

struct ParameterBank {
    std::vector<BlockParams> blocks;  // theta_0 .. theta_{n-1}
    Tensor tok_embed;                 // [vocab, d_model], tied with the LM head
    Tensor pos_embed;                 // [max_seq_len, d_model]
    Tensor final_ln_gain, final_ln_bias;

    static ParameterBank init(const ModelConfig& config, uint64_t seed);

    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<Tensor*> params();
    void zero_grads();
    void set_requires_grad(bool on);
};

// Hidden states and derivatives recorded along one forward pass (one example).
struct Trajectory {
    std::vector<Tensor> states;  // iters+1 detached states, states[0] = embedding
    std::vector<Tensor> derivs;  // iters detached block derivatives
    std::vector<double> times;   // iters+1, times[0] = 0
    StepSchedule schedule;
};

// Piecewise-linear parameter interpolation P(t) over the n stored sets.
// Gradients flow to both endpoint sets, weighted by the interpolation coefficients.
BlockParams interpolate_params(ParameterBank& bank, double t, const ModelConfig& config);

// f(h) such that h + f(h) equals the standard pre-norm block output.
Tensor block_derivative(const BlockParams& params, const Tensor& h, int n_heads, bool causal);

// Monolithic pre-norm block (attention residual, then FFN residual), kept as an
// independent composition for the residual-form equivalence check.
Tensor pre_norm_block(const BlockParams& params, const Tensor& h, int n_heads, bool causal);

struct ForwardResult {
    Tensor logits;       // [seq, vocab]
    Tensor final_state;  // pre-head state h_T (after the iterated block, before final LN)
    Trajectory trajectory;
};

// Euler forward pass: h <- h + beta_i * s * f(P(t_i), h). Embedding, final
// layer-norm and head sit outside the integrated dynamics.
ForwardResult forward(ParameterBank& bank, const std::vector<int>& tokens,
                      const StepSchedule& schedule, const ModelConfig& config,
                      bool record_trajectory = true,
                      const Tensor* resume_state = nullptr, double resume_time = 0.0);

// Mean cross-entropy over predicted positions (targets < 0 are ignored).
Tensor lm_loss(const Tensor& logits, const std::vector<int>& targets);

}  // namespace odelm
