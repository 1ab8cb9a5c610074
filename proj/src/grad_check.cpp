#include "odelm/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "odelm/errors.hpp"
#include "odelm/rng.hpp"

namespace odelm {

namespace {

double rel_err(double analytic, double numeric) {
    // the 1e-6 floor compares near-zero coordinates absolutely, below which
    // central-difference roundoff swamps any meaningful relative comparison
    return std::abs(analytic - numeric) /
           std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

double eval_scalar(const Tensor& t) {
    double v = t.item();
    if (!std::isfinite(v)) throw numeric_error("grad_check: non-finite function value");
    return v;
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point, double eps) {
    Tensor p = point.detached_copy();
    p.requires_grad = true;
    p.ensure_grad();
    Tensor loss = fn(p);
    backward(loss);
    std::vector<double> analytic = *p.grad;

    double worst = 0.0;
    NoGradGuard ng;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        const double orig = (*p.data)[i];
        (*p.data)[i] = orig + eps;
        double up = eval_scalar(fn(p));
        (*p.data)[i] = orig - eps;
        double dn = eval_scalar(fn(p));
        (*p.data)[i] = orig;
        double numeric = (up - dn) / (2.0 * eps);
        if (analytic[i] == 0.0 && numeric == 0.0) continue;
        worst = std::max(worst, rel_err(analytic[i], numeric));
    }
    return worst;
}

double grad_check_params(const std::function<Tensor()>& fn, const std::vector<Tensor*>& params,
                         double eps, int coords_per_tensor, uint64_t seed) {
    for (Tensor* p : params) {
        p->ensure_grad();
        p->zero_grad();
    }
    Tensor loss = fn();
    backward(loss);

    auto rng = substream(seed, "grad_check_params");
    double worst = 0.0;
    NoGradGuard ng;
    for (Tensor* p : params) {
        std::vector<std::size_t> coords(p->numel());
        std::iota(coords.begin(), coords.end(), 0);
        if (coords_per_tensor > 0 && coords.size() > static_cast<std::size_t>(coords_per_tensor)) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(coords_per_tensor);
        }
        for (std::size_t i : coords) {
            const double orig = (*p->data)[i];
            (*p->data)[i] = orig + eps;
            double up = eval_scalar(fn());
            (*p->data)[i] = orig - eps;
            double dn = eval_scalar(fn());
            (*p->data)[i] = orig;
            double numeric = (up - dn) / (2.0 * eps);
            double analytic = (*p->grad)[i];
            if (analytic == 0.0 && numeric == 0.0) continue;
            worst = std::max(worst, rel_err(analytic, numeric));
        }
    }
    return worst;
}

}  // namespace odelm
