#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "odelm/euler.hpp"

namespace odelm {

enum class MetricDirection { maximize, minimize };

struct SearchSpace {
    std::vector<double> grid;  // allowed beta values, ascending
    int target_iters = 0;
    double total_time = 0.0;
    double base_step = 1.0;

    static std::vector<double> default_grid();  // {1.0, 1.1, ..., 3.0}
    void validate() const;
};

struct SearchTrial {
    StepSchedule schedule;
    double metric = 0.0;
    bool failed = false;
    std::string note;
};

struct SearchResult {
    StepSchedule schedule;
    double metric = 0.0;
    std::vector<SearchTrial> trials;
    int budget_used = 0;
};

// All beta equal to T/(iters*s), snapped to the grid, last entry adjusted so the
// schedule lands within s/2 of T.
StepSchedule uniform_schedule(const SearchSpace& space);

// Uniform baseline first, then random on-grid candidates repaired to the time
// constraint, then coordinate hill-climbing around the incumbent. Ties break
// toward the smaller max scale, then lexicographically.
SearchResult search_schedule(const std::function<double(const StepSchedule&)>& eval_fn,
                             const SearchSpace& space, int budget, uint64_t seed,
                             MetricDirection direction = MetricDirection::maximize);

// Audit CSV: trial, beta vector, sum(beta*s), metric, status.
void write_search_audit(const std::string& path, const SearchResult& result);

}  // namespace odelm
