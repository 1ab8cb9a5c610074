#include "odelm/diagnostics.hpp"

#include <cmath>

#include "odelm/errors.hpp"

namespace odelm {

namespace {

double tensor_l2(const Tensor& t) {
    double s = 0.0;
    for (double v : *t.data) s += v * v;
    return std::sqrt(s);
}

double tensor_l2_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw usage_error("hidden_diff: final states have different shapes");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        double d = (*a.data)[i] - (*b.data)[i];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

double CosineProfile::mean() const {
    if (values.empty()) return 0.0;
    double s = 0.0;
    for (double v : values) s += v;
    return s / values.size();
}

DiffReport hidden_diff(const Trajectory& full, const Trajectory& reduced) {
    if (full.states.empty() || reduced.states.empty())
        throw usage_error("hidden_diff: empty trajectory");
    const double tol = 0.5 * std::max(full.schedule.base_step, reduced.schedule.base_step);
    if (std::abs(full.times.back() - reduced.times.back()) > tol + 1e-12)
        throw usage_error("hidden_diff: trajectories end at different times");
    DiffReport r;
    r.absolute = tensor_l2_diff(full.states.back(), reduced.states.back());
    const double base = tensor_l2(full.states.back());
    r.relative = base > 0.0 ? r.absolute / base : 0.0;
    return r;
}

DiffReport hidden_diff(const std::vector<Trajectory>& full, const std::vector<Trajectory>& reduced) {
    if (full.size() != reduced.size() || full.empty())
        throw usage_error("hidden_diff: batches must be non-empty and parallel");
    DiffReport sum;
    for (std::size_t i = 0; i < full.size(); ++i) {
        DiffReport r = hidden_diff(full[i], reduced[i]);
        sum.absolute += r.absolute;
        sum.relative += r.relative;
    }
    sum.absolute /= full.size();
    sum.relative /= full.size();
    return sum;
}

CosineProfile cosine_profile(const Trajectory& traj) {
    if (traj.derivs.size() < 2) throw usage_error("cosine_profile: need at least 2 derivative records");
    CosineProfile p;
    for (std::size_t i = 1; i < traj.derivs.size(); ++i) {
        const Tensor& a = traj.derivs[i];
        const Tensor& b = traj.derivs[i - 1];
        double na = tensor_l2(a), nb = tensor_l2(b);
        if (na == 0.0 || nb == 0.0) {
            p.zero_derivative_seen = true;
            p.values.push_back(0.0);
            continue;
        }
        double dot = 0.0;
        for (std::size_t j = 0; j < a.numel(); ++j) dot += (*a.data)[j] * (*b.data)[j];
        p.values.push_back(dot / (na * nb));
    }
    return p;
}

CosineProfile cosine_profile(const std::vector<Trajectory>& batch) {
    if (batch.empty()) throw usage_error("cosine_profile: empty batch");
    CosineProfile acc = cosine_profile(batch[0]);
    for (std::size_t i = 1; i < batch.size(); ++i) {
        CosineProfile p = cosine_profile(batch[i]);
        if (p.values.size() != acc.values.size())
            throw usage_error("cosine_profile: trajectories have different lengths");
        for (std::size_t j = 0; j < p.values.size(); ++j) acc.values[j] += p.values[j];
        acc.zero_derivative_seen |= p.zero_derivative_seen;
    }
    for (double& v : acc.values) v /= batch.size();
    return acc;
}

double relative_change(double p_reduced, double p_orig) {
    if (p_orig == 0.0) throw std::domain_error("relative_change: original metric is zero");
    return 100.0 * (p_reduced - p_orig) / p_orig;
}

}  // namespace odelm
