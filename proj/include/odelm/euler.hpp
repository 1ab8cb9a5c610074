#pragma once

#include <functional>
#include <optional>
#include <vector>

namespace odelm {

using Vec = std::vector<double>;

// Vector field y'(t) = f(y, t) with the bounds used by the truncation-error
// theory: R >= sup|f_y| (Lipschitz in y), M >= sup|y''| along the solution.
struct AnalyticField {
    std::function<Vec(const Vec&, double)> f;
    double deriv_bound = 0.0;      // R
    double curvature_bound = 0.0;  // M
    std::optional<std::function<Vec(double)>> exact;
};

// Base step size s with per-iteration scale factors; covers total_time approximately.
struct StepSchedule {
    double base_step = 1.0;
    std::vector<double> scales;
    double total_time = 0.0;

    static StepSchedule uniform(int iters, double s);

    int iters() const { return static_cast<int>(scales.size()); }
    double duration() const;
    double max_scale() const;
    // |sum(beta*s) - T| <= 0.5*s
    bool covers_total_time() const;
    void validate() const;  // throws config_error
};

struct EulerTrajectory {
    std::vector<double> times;  // iters+1 entries
    std::vector<Vec> states;    // iters+1 entries

    const Vec& final_state() const { return states.back(); }
};

struct ErrorBoundReport {
    double beta_star = 0.0;
    double bound_constant = 0.0;  // K
    double observed_gap = 0.0;    // ||y_scaled(T) - y_unit(T)||
    double bound_value = 0.0;     // K * (1 + beta*) * s
};

struct OrderScan {
    std::vector<std::pair<double, double>> points;  // (s, error)
    double fitted_order = 0.0;                      // log-log least squares slope
    bool degenerate = false;                        // all errors ~ 0
};

EulerTrajectory euler_solve(const AnalyticField& field, const Vec& y0, const StepSchedule& schedule);

// ||exact(t0+s) - (y0 + s f(y0,t0))||, requires field.exact
double local_error(const AnalyticField& field, const Vec& y0, double t0, double s);

OrderScan error_order_scan(const AnalyticField& field, const Vec& y0, double total_time,
                           const std::vector<double>& steps);
// Single-step variant: error of one Euler step of size s from t=0.
OrderScan local_order_scan(const AnalyticField& field, const Vec& y0, const std::vector<double>& steps);

// K = ((e^{RT}-1)/R) * (M/2), continuous limit M*T/2 as R -> 0.
double bound_constant(double deriv_bound, double curvature_bound, double total_time);

ErrorBoundReport verify_bound(const AnalyticField& field, const Vec& y0, double base_step,
                              const StepSchedule& scaled_schedule);

// Dense fixed-step Euler reference used as the oracle for fields without a
// closed-form solution (step = s/1000 convention lives at the call sites).
Vec euler_reference(const AnalyticField& field, const Vec& y0, double t0, double t1, int steps);

double l2_norm(const Vec& v);
double l2_dist(const Vec& a, const Vec& b);

}  // namespace odelm
