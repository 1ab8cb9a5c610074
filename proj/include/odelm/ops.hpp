#pragma once

#include <vector>

#include "odelm/tensor.hpp"

namespace odelm::ops {

// Elementwise and shape ops
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// a + c * b, the Euler residual update
Tensor add_scaled(const Tensor& a, const Tensor& b, double c);
// a + w * (b - a), parameter interpolation
Tensor lerp(const Tensor& a, const Tensor& b, double w);
Tensor slice_rows(const Tensor& x, int start, int count);
Tensor slice_cols(const Tensor& x, int start, int count);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]x[n,k]^T -> [m,n]

// Layer primitives
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x[m,k] w[k,n] b[n]
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor gelu(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor embedding(const Tensor& table, const std::vector<int>& ids);
// Fused multi-head scaled dot-product attention over one sequence.
Tensor attention(const Tensor& x, const Tensor& wq, const Tensor& bq, const Tensor& wk,
                 const Tensor& bk, const Tensor& wv, const Tensor& bv, const Tensor& wo,
                 const Tensor& bo, int n_heads, bool causal);
// Mean cross-entropy over rows whose target id is >= 0.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

Tensor sum(const Tensor& x);

inline constexpr double kLayerNormEps = 1e-5;

}  // namespace odelm::ops
