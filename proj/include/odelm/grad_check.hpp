#pragma once

#include <functional>

#include "odelm/tensor.hpp"

namespace odelm {

// Max over coordinates of |analytic - central difference| / max(|analytic|, |numeric|, 1e-6).
// fn must be scalar-valued and deterministic; the analytic gradient comes from one
// forward+backward at `point`, the numeric one from central differences with step eps.
double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point, double eps);

// Same check for a function of several parameter tensors, optionally probing only
// `coords_per_tensor` randomly chosen coordinates per tensor (0 = all coordinates).
double grad_check_params(const std::function<Tensor()>& fn, const std::vector<Tensor*>& params,
                         double eps, int coords_per_tensor = 0, uint64_t seed = 0);

}  // namespace odelm
