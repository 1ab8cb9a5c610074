#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "odelm/diagnostics.hpp"
#include "odelm/errors.hpp"

using namespace odelm;

namespace {

Trajectory make_traj(std::vector<Tensor> states, std::vector<Tensor> derivs, double base_step,
                     double end_time) {
    Trajectory t;
    t.states = std::move(states);
    t.derivs = std::move(derivs);
    t.schedule.base_step = base_step;
    t.times = {0.0, end_time};
    while (t.times.size() < t.states.size()) t.times.insert(t.times.end() - 1, end_time / 2);
    return t;
}

Tensor vec2(double a, double b) { return Tensor::from({1, 2}, {a, b}); }

}  // namespace

TEST_CASE("identical trajectories have zero difference") {
    Trajectory t = make_traj({vec2(1, 2), vec2(3, 4)}, {}, 1.0, 2.0);
    DiffReport r = hidden_diff(t, t);
    CHECK(r.absolute == 0.0);
    CHECK(r.relative == 0.0);
}

TEST_CASE("difference norms are computed on the final state") {
    Trajectory a = make_traj({vec2(0, 0), vec2(3, 4)}, {}, 1.0, 2.0);
    Trajectory b = make_traj({vec2(9, 9), vec2(0, 0)}, {}, 1.0, 2.0);
    DiffReport r = hidden_diff(a, b);
    CHECK(r.absolute == doctest::Approx(5.0));      // ||(3,4)||
    CHECK(r.relative == doctest::Approx(1.0));      // against ||(3,4)||
}

TEST_CASE("absolute difference is homogeneous in the gap") {
    Trajectory a = make_traj({vec2(1, 1)}, {}, 1.0, 1.0);
    Trajectory b = make_traj({vec2(1.1, 1.1)}, {}, 1.0, 1.0);
    Trajectory c = make_traj({vec2(1.2, 1.2)}, {}, 1.0, 1.0);
    CHECK(hidden_diff(a, c).absolute == doctest::Approx(2.0 * hidden_diff(a, b).absolute));
}

TEST_CASE("batch report averages per-example reports") {
    Trajectory x = make_traj({vec2(1, 0)}, {}, 1.0, 1.0);
    Trajectory y = make_traj({vec2(0, 1)}, {}, 1.0, 1.0);
    Trajectory z = make_traj({vec2(3, 0)}, {}, 1.0, 1.0);
    DiffReport r = hidden_diff(std::vector<Trajectory>{x, x}, std::vector<Trajectory>{y, z});
    // gaps: sqrt(2) and 2; relatives against ||x|| = 1
    CHECK(r.absolute == doctest::Approx(0.5 * (std::sqrt(2.0) + 2.0)));
    CHECK(r.relative == doctest::Approx(0.5 * (std::sqrt(2.0) + 2.0)));
}

TEST_CASE("mismatched trajectories are usage errors") {
    Trajectory a = make_traj({vec2(1, 2)}, {}, 1.0, 2.0);
    Trajectory late = make_traj({vec2(1, 2)}, {}, 1.0, 8.0);
    CHECK_THROWS_AS(hidden_diff(a, late), usage_error);
    Trajectory wide = make_traj({Tensor::from({1, 3}, {1, 2, 3})}, {}, 1.0, 2.0);
    CHECK_THROWS_AS(hidden_diff(a, wide), usage_error);
    CHECK_THROWS_AS(hidden_diff(std::vector<Trajectory>{a}, std::vector<Trajectory>{a, a}),
                    usage_error);
    CHECK_THROWS_AS(hidden_diff(std::vector<Trajectory>{}, std::vector<Trajectory>{}), usage_error);
}

TEST_CASE("end times within half a base step still compare") {
    Trajectory a = make_traj({vec2(1, 2)}, {}, 1.0, 2.0);
    Trajectory b = make_traj({vec2(1, 2)}, {}, 1.0, 2.4);
    CHECK(hidden_diff(a, b).absolute == 0.0);
}

TEST_CASE("cosine of parallel, orthogonal and opposite derivatives") {
    Trajectory t = make_traj({vec2(0, 0), vec2(0, 0), vec2(0, 0), vec2(0, 0), vec2(0, 0)},
                             {vec2(1, 0), vec2(2, 0), vec2(0, 5), vec2(0, -2)}, 1.0, 4.0);
    CosineProfile p = cosine_profile(t);
    REQUIRE(p.values.size() == 3);
    CHECK(p.values[0] == doctest::Approx(1.0));   // parallel
    CHECK(p.values[1] == doctest::Approx(0.0));   // orthogonal
    CHECK(p.values[2] == doctest::Approx(-1.0));  // opposite
    CHECK_FALSE(p.zero_derivative_seen);
    CHECK(p.mean() == doctest::Approx(0.0));
}

TEST_CASE("zero derivatives are flagged, not divided by") {
    Trajectory t = make_traj({vec2(0, 0), vec2(0, 0), vec2(0, 0)},
                             {vec2(1, 0), vec2(0, 0)}, 1.0, 2.0);
    CosineProfile p = cosine_profile(t);
    CHECK(p.zero_derivative_seen);
    CHECK(p.values[0] == 0.0);
}

TEST_CASE("batch cosine averages positionwise") {
    Trajectory up = make_traj({vec2(0, 0), vec2(0, 0), vec2(0, 0)},
                              {vec2(1, 0), vec2(1, 0)}, 1.0, 2.0);
    Trajectory flip = make_traj({vec2(0, 0), vec2(0, 0), vec2(0, 0)},
                                {vec2(1, 0), vec2(-1, 0)}, 1.0, 2.0);
    CosineProfile p = cosine_profile(std::vector<Trajectory>{up, flip});
    REQUIRE(p.values.size() == 1);
    CHECK(p.values[0] == doctest::Approx(0.0));  // (1 + -1)/2
    CHECK_THROWS_AS(cosine_profile(std::vector<Trajectory>{}), usage_error);
    Trajectory one = make_traj({vec2(0, 0), vec2(0, 0)}, {vec2(1, 0)}, 1.0, 1.0);
    CHECK_THROWS_AS(cosine_profile(one), usage_error);
}

TEST_CASE("relative metric changes match hand-checked benchmark deltas") {
    // 83.6 -> 83.3 accuracy: about a -0.4% relative move
    CHECK(relative_change(83.3, 83.6) == doctest::Approx(-0.358851674641).epsilon(1e-9));
    CHECK(relative_change(83.3, 83.6) > -0.45);
    CHECK(relative_change(83.3, 83.6) < -0.3);
    // 33.0 -> 33.5 perplexity: about a +1.5% relative move
    CHECK(relative_change(33.5, 33.0) == doctest::Approx(1.515151515151).epsilon(1e-9));
    CHECK(relative_change(50.0, 50.0) == 0.0);
    CHECK_THROWS_AS(relative_change(1.0, 0.0), std::domain_error);
}
