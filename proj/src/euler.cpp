#include "odelm/euler.hpp"

#include <cmath>
#include <string>

#include "odelm/errors.hpp"

namespace odelm {

double l2_norm(const Vec& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double l2_dist(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw config_error("l2_dist: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

StepSchedule StepSchedule::uniform(int iters, double s) {
    StepSchedule sched;
    sched.base_step = s;
    sched.scales.assign(iters, 1.0);
    sched.total_time = iters * s;
    return sched;
}

double StepSchedule::duration() const {
    double t = 0.0;
    for (double b : scales) t += b * base_step;
    return t;
}

double StepSchedule::max_scale() const {
    double m = 0.0;
    for (double b : scales) m = std::max(m, b);
    return m;
}

bool StepSchedule::covers_total_time() const {
    return std::abs(duration() - total_time) <= 0.5 * base_step + 1e-12;
}

void StepSchedule::validate() const {
    if (base_step <= 0.0) throw config_error("schedule: base step must be positive");
    if (scales.empty()) throw config_error("schedule: no steps");
    if (!covers_total_time())
        throw config_error("schedule: sum(beta*s)=" + std::to_string(duration()) +
                           " misses total time " + std::to_string(total_time) + " by more than s/2");
}

EulerTrajectory euler_solve(const AnalyticField& field, const Vec& y0, const StepSchedule& schedule) {
    schedule.validate();
    for (double v : y0)
        if (!std::isfinite(v)) throw numeric_error("euler_solve: non-finite initial state");

    EulerTrajectory traj;
    traj.times.push_back(0.0);
    traj.states.push_back(y0);
    Vec y = y0;
    double t = 0.0;
    for (int i = 0; i < schedule.iters(); ++i) {
        const double h = schedule.scales[i] * schedule.base_step;
        Vec dy = field.f(y, t);
        for (std::size_t j = 0; j < y.size(); ++j) {
            y[j] += h * dy[j];
            if (!std::isfinite(y[j]))
                throw numeric_error("euler_solve: non-finite state at step " + std::to_string(i));
        }
        t += h;
        traj.times.push_back(t);
        traj.states.push_back(y);
    }
    return traj;
}

double local_error(const AnalyticField& field, const Vec& y0, double t0, double s) {
    if (!field.exact) throw config_error("local_error: field has no exact solution");
    Vec dy = field.f(y0, t0);
    Vec approx = y0;
    for (std::size_t j = 0; j < y0.size(); ++j) approx[j] += s * dy[j];
    return l2_dist((*field.exact)(t0 + s), approx);
}

namespace {

double fit_loglog_slope(const std::vector<std::pair<double, double>>& pts) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (auto [s, e] : pts) {
        double x = std::log(s), y = std::log(e);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

OrderScan fit_scan(std::vector<std::pair<double, double>> pts) {
    OrderScan scan;
    scan.points = std::move(pts);
    for (auto [s, e] : scan.points)
        if (e < 1e-14) scan.degenerate = true;
    scan.fitted_order = scan.degenerate ? 0.0 : fit_loglog_slope(scan.points);
    return scan;
}

void check_steps(const std::vector<double>& steps) {
    if (steps.size() < 3) throw config_error("order scan needs at least 3 step sizes");
    for (std::size_t i = 1; i < steps.size(); ++i)
        if (steps[i] >= steps[i - 1]) throw config_error("order scan steps must be strictly decreasing");
}

}  // namespace

OrderScan error_order_scan(const AnalyticField& field, const Vec& y0, double total_time,
                           const std::vector<double>& steps) {
    if (!field.exact) throw config_error("error_order_scan: field has no exact solution");
    check_steps(steps);
    Vec truth = (*field.exact)(total_time);
    std::vector<std::pair<double, double>> pts;
    for (double s : steps) {
        int iters = static_cast<int>(std::llround(total_time / s));
        StepSchedule sched = StepSchedule::uniform(iters, s);
        sched.total_time = total_time;
        EulerTrajectory traj = euler_solve(field, y0, sched);
        pts.emplace_back(s, l2_dist(traj.final_state(), truth));
    }
    return fit_scan(std::move(pts));
}

OrderScan local_order_scan(const AnalyticField& field, const Vec& y0, const std::vector<double>& steps) {
    if (!field.exact) throw config_error("local_order_scan: field has no exact solution");
    check_steps(steps);
    std::vector<std::pair<double, double>> pts;
    for (double s : steps) pts.emplace_back(s, local_error(field, y0, 0.0, s));
    return fit_scan(std::move(pts));
}

double bound_constant(double deriv_bound, double curvature_bound, double total_time) {
    if (deriv_bound < 0.0 || curvature_bound < 0.0)
        throw config_error("bound_constant: R and M must be non-negative");
    const double growth = deriv_bound < 1e-12
                              ? total_time  // lim_{R->0} (e^{RT}-1)/R = T
                              : (std::exp(deriv_bound * total_time) - 1.0) / deriv_bound;
    return growth * curvature_bound / 2.0;
}

ErrorBoundReport verify_bound(const AnalyticField& field, const Vec& y0, double base_step,
                              const StepSchedule& scaled_schedule) {
    scaled_schedule.validate();
    const double total_time = scaled_schedule.total_time;
    int unit_iters = static_cast<int>(std::llround(total_time / base_step));
    StepSchedule unit = StepSchedule::uniform(unit_iters, base_step);
    unit.total_time = total_time;

    ErrorBoundReport report;
    report.beta_star = scaled_schedule.max_scale();
    report.bound_constant = bound_constant(field.deriv_bound, field.curvature_bound, total_time);
    report.bound_value = report.bound_constant * (1.0 + report.beta_star) * base_step;
    report.observed_gap = l2_dist(euler_solve(field, y0, scaled_schedule).final_state(),
                                  euler_solve(field, y0, unit).final_state());
    return report;
}

Vec euler_reference(const AnalyticField& field, const Vec& y0, double t0, double t1, int steps) {
    if (steps < 1) throw config_error("euler_reference: steps must be >= 1");
    Vec y = y0;
    double t = t0;
    const double h = (t1 - t0) / steps;
    for (int i = 0; i < steps; ++i) {
        Vec dy = field.f(y, t);
        for (std::size_t j = 0; j < y.size(); ++j) y[j] += h * dy[j];
        t += h;
    }
    return y;
}

}  // namespace odelm
