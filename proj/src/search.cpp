#include "odelm/search.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "odelm/errors.hpp"
#include "odelm/rng.hpp"

namespace odelm {

std::vector<double> SearchSpace::default_grid() {
    std::vector<double> g;
    for (int i = 10; i <= 30; ++i) g.push_back(i / 10.0);
    return g;
}

void SearchSpace::validate() const {
    if (grid.size() < 2) throw config_error("search space: grid needs at least 2 values");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (grid[i] <= grid[i - 1]) throw config_error("search space: grid must be ascending");
    if (target_iters < 1) throw config_error("search space: target_iters must be >= 1");
    if (base_step <= 0.0) throw config_error("search space: base_step must be positive");
    const double lo = target_iters * grid.front() * base_step;
    const double hi = target_iters * grid.back() * base_step;
    if (total_time < lo - 0.5 * base_step || total_time > hi + 0.5 * base_step)
        throw config_error("search space: total time " + std::to_string(total_time) +
                           " unreachable with " + std::to_string(target_iters) + " iterations on grid [" +
                           std::to_string(grid.front()) + "," + std::to_string(grid.back()) + "]");
}

namespace {

double snap(const std::vector<double>& grid, double v) {
    double best = grid[0];
    for (double g : grid)
        if (std::abs(g - v) < std::abs(best - v)) best = g;
    return best;
}

// Bring sum(beta*s) within s/2 of T by re-snapping coordinates, last first.
void repair(std::vector<double>& scales, const SearchSpace& space) {
    const double target_sum = space.total_time / space.base_step;  // in beta units
    auto total = [&] {
        double s = 0.0;
        for (double b : scales) s += b;
        return s;
    };
    for (int i = static_cast<int>(scales.size()) - 1; i >= 0; --i) {
        if (std::abs(total() - target_sum) <= 0.5) return;
        double needed = target_sum - (total() - scales[i]);
        scales[i] = snap(space.grid, needed);
    }
}

struct Scorer {
    MetricDirection dir;
    double score(double metric) const { return dir == MetricDirection::maximize ? metric : -metric; }
    // true when candidate beats incumbent, with the documented tie-breaking
    bool better(const StepSchedule& cand, double cm, const StepSchedule& inc, double im) const {
        const double cs = score(cm), is = score(im);
        if (cs > is + 1e-15) return true;
        if (cs < is - 1e-15) return false;
        if (cand.max_scale() < inc.max_scale() - 1e-12) return true;
        if (cand.max_scale() > inc.max_scale() + 1e-12) return false;
        return cand.scales < inc.scales;
    }
};

}  // namespace

StepSchedule uniform_schedule(const SearchSpace& space) {
    space.validate();
    StepSchedule sched;
    sched.base_step = space.base_step;
    sched.total_time = space.total_time;
    const double beta = space.total_time / (space.target_iters * space.base_step);
    sched.scales.assign(space.target_iters, snap(space.grid, beta));
    repair(sched.scales, space);
    if (!sched.covers_total_time())
        throw config_error("uniform_schedule: cannot land within s/2 of total time on this grid");
    return sched;
}

SearchResult search_schedule(const std::function<double(const StepSchedule&)>& eval_fn,
                             const SearchSpace& space, int budget, uint64_t seed,
                             MetricDirection direction) {
    space.validate();
    if (budget < 0) throw config_error("search: budget must be >= 0");
    Scorer scorer{direction};
    SearchResult result;

    auto make_schedule = [&](std::vector<double> scales) {
        StepSchedule s;
        s.base_step = space.base_step;
        s.total_time = space.total_time;
        s.scales = std::move(scales);
        return s;
    };

    bool have_incumbent = false;
    auto try_candidate = [&](StepSchedule sched) {
        SearchTrial trial;
        trial.schedule = sched;
        try {
            trial.metric = eval_fn(sched);
        } catch (const std::exception& e) {
            trial.failed = true;
            trial.note = e.what();
            result.trials.push_back(std::move(trial));
            return;
        }
        if (!have_incumbent ||
            scorer.better(sched, trial.metric, result.schedule, result.metric)) {
            result.schedule = sched;
            result.metric = trial.metric;
            have_incumbent = true;
        }
        result.trials.push_back(std::move(trial));
    };

    try_candidate(uniform_schedule(space));

    auto rng = substream(seed, "step_search");
    std::uniform_int_distribution<int> pick_grid(0, static_cast<int>(space.grid.size()) - 1);
    std::uniform_int_distribution<int> pick_coord(0, space.target_iters - 1);

    const int n_random = budget / 2;
    for (int i = 0; i < n_random; ++i) {
        std::vector<double> scales(space.target_iters);
        for (double& b : scales) b = space.grid[pick_grid(rng)];
        repair(scales, space);
        StepSchedule cand = make_schedule(std::move(scales));
        if (!cand.covers_total_time()) continue;  // unrepairable draw still consumes budget
        try_candidate(cand);
    }

    // coordinate hill-climb: +/- one grid step with a compensating move elsewhere
    for (int i = n_random; i < budget; ++i) {
        if (!have_incumbent) break;
        std::vector<double> scales = result.schedule.scales;
        const int a = pick_coord(rng);
        int b = pick_coord(rng);
        if (space.target_iters > 1)
            while (b == a) b = pick_coord(rng);
        const int dir = (pick_grid(rng) % 2) ? 1 : -1;
        auto idx = [&](double v) {
            return static_cast<int>(std::lower_bound(space.grid.begin(), space.grid.end(), v - 1e-12) -
                                    space.grid.begin());
        };
        int ia = idx(scales[a]) + dir;
        int ib = idx(scales[b]) - dir;
        if (ia < 0 || ia >= static_cast<int>(space.grid.size()) || ib < 0 ||
            ib >= static_cast<int>(space.grid.size()))
            continue;
        scales[a] = space.grid[ia];
        if (space.target_iters > 1) scales[b] = space.grid[ib];
        StepSchedule cand = make_schedule(std::move(scales));
        if (!cand.covers_total_time()) continue;
        try_candidate(cand);
    }

    result.budget_used = static_cast<int>(result.trials.size()) - 1;
    if (!have_incumbent) throw numeric_error("search: every trial failed");
    return result;
}

void write_search_audit(const std::string& path, const SearchResult& result) {
    std::ofstream out(path);
    if (!out) throw data_error("search audit: cannot open '" + path + "'");
    out << "trial,betas,sum_beta_s,metric,status\n";
    for (std::size_t i = 0; i < result.trials.size(); ++i) {
        const SearchTrial& t = result.trials[i];
        out << i << ",\"";
        for (std::size_t j = 0; j < t.schedule.scales.size(); ++j) {
            if (j) out << " ";
            out << t.schedule.scales[j];
        }
        out << "\"," << t.schedule.duration() << "," << t.metric << ","
            << (t.failed ? "failed" : "ok") << "\n";
    }
}

}  // namespace odelm
