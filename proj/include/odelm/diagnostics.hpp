#pragma once

#include <vector>

#include "odelm/model.hpp"

namespace odelm {

// Terminal-state difference between a full-schedule and a reduced-schedule run.
// Norms are L2 over the flattened (seq x d_model) pre-head final state, with
// both absolute and relative values averaged over the example batch.
struct DiffReport {
    double absolute = 0.0;
    double relative = 0.0;
};

struct CosineProfile {
    std::vector<double> values;  // cos(f(h_i), f(h_{i-1})), i = 1..iters-1
    bool zero_derivative_seen = false;

    double mean() const;
};

DiffReport hidden_diff(const std::vector<Trajectory>& full, const std::vector<Trajectory>& reduced);
DiffReport hidden_diff(const Trajectory& full, const Trajectory& reduced);

CosineProfile cosine_profile(const std::vector<Trajectory>& batch);
CosineProfile cosine_profile(const Trajectory& traj);

// 100 * (p_reduced - p_orig) / p_orig
double relative_change(double p_reduced, double p_orig);

}  // namespace odelm
