#include <doctest.h>

#include "mbcbf/random.hpp"
#include "mbcbf/switch_governor.hpp"

#include <cmath>
#include <vector>

using namespace mbcbf;

namespace {

const std::vector<Obstacle> kCone = {Obstacle{Vec2::Zero(), 0.5, Vec2::Zero()}};

FilterConfig config() {
    FilterConfig c;
    c.bounds = {0.5, 1.0};
    return c;
}

PolicyParams params() {
    PolicyParams p;
    p.bounds = {0.5, 1.0};
    return p;
}

// Margins checked by stepping the closed loop directly at the flow step size.
bool direct_margins_ok(const State& x0, PolicyId id, const FilterConfig& cfg, const PolicyParams& p) {
    const ControlLaw law = policy_law(id, kCone[0], p);
    const int steps_per_sample = static_cast<int>(std::lround(cfg.horizon / cfg.n_tau / 0.01));
    State x = x0;
    if (h_distance(x, kCone[0]) < 0)
        return false;
    for (int i = 0; i < cfg.n_tau; ++i) {
        for (int s = 0; s < steps_per_sample; ++s)
            x = step_closed_loop(x, law, 0.01);
        if (h_distance(x, kCone[0]) < 0)
            return false;
    }
    return policy_barrier(id, x, kCone[0], p) >= 0;
}

} // namespace

TEST_CASE("proposal is the argmax with sticky ties") {
    const std::vector<double> a{0.2, 0.9, 0.4}, b{0.5, 0.5, 0.1}, c{0.5, 0.5, 0.5};
    CHECK(propose(a, PolicyId{0}) == PolicyId{1});
    CHECK(propose(b, PolicyId{1}) == PolicyId{1});
    CHECK(propose(b, PolicyId{2}) == PolicyId{0});
    CHECK(propose(c, PolicyId{2}) == PolicyId{2});
    CHECK_THROWS(propose(std::vector<double>{}, PolicyId{0}));
}

TEST_CASE("validation far away accepts every candidate") {
    const State x{-3.5, 3.0, 2.5};
    for (int id = 0; id < kPolicyCount; ++id)
        CHECK(validate_switch(x, PolicyId{id}, {0.3, 0.2}, kCone, config(), params()));
}

TEST_CASE("validation near the boundary matches direct simulation") {
    const FilterConfig cfg = config();
    const PolicyParams p = params();
    Rng rng(12);
    for (int i = 0; i < 40; ++i) {
        const double bearing = rng.uniform(0, 6.283185307179586);
        const double d = 0.5 + rng.uniform(1e-6, 0.05);
        const State x{d * std::cos(bearing), d * std::sin(bearing),
                      bearing + 3.141592653589793 + rng.uniform(-0.6, 0.6)};
        const Input ud{0.2, 0.0};
        for (int id = 0; id < kPolicyCount; ++id) {
            const bool expected =
                direct_margins_ok(x, PolicyId{id}, cfg, p) && filter(x, ud, PolicyId{id}, kCone, cfg, p).feasible;
            CHECK(validate_switch(x, PolicyId{id}, ud, kCone, cfg, p) == expected);
        }
    }
}

TEST_CASE("reverse flow into the cone is rejected") {
    const State x{0.55, 0.0, 0.0};
    CHECK_FALSE(validate_switch(x, PolicyId{2}, {0, 0}, kCone, config(), params()));
}

TEST_CASE("governor step rules") {
    const FilterConfig cfg = config();
    const PolicyParams p = params();
    GovernorConfig g;
    g.dwell_ticks = 10;

    SwitchState s;
    s.active = PolicyId{0};
    const State far{-3.5, 3.0, 2.5};

    SUBCASE("rewards favoring the active policy") {
        const std::vector<double> r{0.9, 0.1, 0.1};
        const GovernorStep out = governor_step(s, r, far, {0, 0}, kCone, cfg, p, g);
        CHECK_FALSE(out.event);
        CHECK(out.state.active == PolicyId{0});
        CHECK(out.state.tick == 1);
        CHECK(out.state.rejected_switches == 0);
    }
    SUBCASE("validated switch") {
        const std::vector<double> r{0.1, 0.9, 0.1};
        const GovernorStep out = governor_step(s, r, far, {0, 0}, kCone, cfg, p, g);
        REQUIRE(out.event);
        CHECK(out.event->from == PolicyId{0});
        CHECK(out.event->to == PolicyId{1});
        CHECK(out.event->validated);
        CHECK(out.event->rewards == r);
        CHECK(out.state.active == PolicyId{1});
        CHECK(out.state.dwell_remaining == 10);
        CHECK(out.state.last_switch_tick == 0);
    }
    SUBCASE("rejected switch keeps the policy and counts") {
        const State x{0.55, 0.0, 0.0};
        const std::vector<double> r{0.1, 0.1, 0.9};
        const GovernorStep out = governor_step(s, r, x, {0, 0}, kCone, cfg, p, g);
        CHECK_FALSE(out.event);
        CHECK(out.state.active == PolicyId{0});
        CHECK(out.state.rejected_switches == 1);
    }
}

TEST_CASE("dwell spaces executed switches") {
    const FilterConfig cfg = config();
    const PolicyParams p = params();
    GovernorConfig g;
    g.dwell_ticks = 7;
    SwitchState s;
    const State far{-3.5, 3.0, 2.5};
    Rng rng(1);
    std::vector<std::int64_t> ticks;
    for (int k = 0; k < 200; ++k) {
        std::vector<double> r{rng.uniform(), rng.uniform(), rng.uniform()};
        const GovernorStep out = governor_step(s, r, far, {0, 0}, kCone, cfg, p, g);
        if (out.event) {
            CHECK(out.event->validated);
            CHECK(validate_switch(far, out.event->to, {0, 0}, kCone, cfg, p));
            ticks.push_back(out.event->tick);
        }
        s = out.state;
    }
    REQUIRE(ticks.size() > 5);
    for (std::size_t i = 1; i < ticks.size(); ++i)
        CHECK(ticks[i] - ticks[i - 1] > g.dwell_ticks);
}
