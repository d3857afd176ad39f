#include <doctest.h>

#include "mbcbf/random.hpp"
#include "mbcbf/safety_filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

using namespace mbcbf;

namespace {

const Obstacle kCone{Vec2::Zero(), 0.5, Vec2::Zero()};

FilterConfig default_config() {
    FilterConfig c;
    c.bounds = {0.5, 1.0};
    return c;
}

PolicyParams default_params() {
    PolicyParams p;
    p.bounds = {0.5, 1.0};
    return p;
}

bool rows_hold(const std::vector<Halfplane>& rows, const Input& u) {
    return std::all_of(rows.begin(), rows.end(),
                       [&](const Halfplane& r) { return r.a.dot(u.vec()) >= r.b; });
}

} // namespace

TEST_CASE("far from the obstacle every row is slack") {
    const FilterConfig cfg = default_config();
    const PolicyParams p = default_params();
    const State x{-30, 5, 0.2};
    for (int id = 0; id < kPolicyCount; ++id) {
        const FlowResult flow = integrate_backup_flow(x, PolicyId{id}, kCone, p, cfg.horizon, cfg.n_tau);
        const auto rows = assemble_constraints(flow, x, kCone, cfg, p);
        CHECK(rows.size() == static_cast<std::size_t>(cfg.n_tau + 2));
        for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
            // |a| is bounded by |Q| |g| so any bounded input satisfies the row.
            const double worst = rows[i].a.cwiseAbs().dot(Vec2(cfg.bounds.v_max, cfg.bounds.omega_max));
            CHECK(rows[i].b + worst < 0.0);
        }
    }
    const FilterOutput out = filter(x, {0.4, -0.7}, PolicyId{0}, kCone, cfg, p);
    CHECK(out.feasible);
    CHECK(out.u_safe == Input{0.4, -0.7});
    CHECK(out.intervention == 0.0);
}

TEST_CASE("single-sample grid collapses to the plain CBF row") {
    FilterConfig cfg = default_config();
    cfg.n_tau = 1;
    const PolicyParams p = default_params();
    const State x{1.2, 0.4, 2.0};
    const FlowResult flow = integrate_backup_flow(x, PolicyId{1}, kCone, p, cfg.horizon, cfg.n_tau);
    const auto rows = assemble_constraints(flow, x, kCone, cfg, p);
    const RowVec3 grad = h_distance_gradient(x, kCone);
    const Vec2 a = (grad * input_matrix(x)).transpose();
    CHECK((rows[0].a - a).norm() == 0.0);
    CHECK(rows[0].b == -cfg.alpha_gain * h_distance(x, kCone));
}

TEST_CASE("constraint rows match a finite-difference chain rule") {
    const FilterConfig cfg = default_config();
    const PolicyParams p = default_params();
    Rng rng(17);
    int cases = 0;
    while (cases < 20) {
        const State x{rng.uniform(-2.5, 2.5), rng.uniform(-2.5, 2.5), rng.uniform(-3, 3)};
        if (h_distance(x, kCone) < 0.3)
            continue;
        ++cases;
        for (int id = 0; id < kPolicyCount; ++id) {
            const PolicyId pid{id};
            const FlowResult flow = integrate_backup_flow(x, pid, kCone, p, cfg.horizon, cfg.n_tau);
            const auto rows = assemble_constraints(flow, x, kCone, cfg, p);
            const Mat32 g = input_matrix(x);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const bool terminal = i + 1 == rows.size();
                const double tau = terminal ? cfg.horizon : flow.samples[i].tau;
                auto value = [&](const Vec3& x0) {
                    const State e = backup_flow_endpoint(State::from(x0), pid, kCone, p, tau);
                    return terminal ? policy_barrier(pid, e, kCone, p) : h_distance(e, kCone);
                };
                RowVec3 grad;
                const double d = 1e-6;
                for (int j = 0; j < 3; ++j) {
                    Vec3 plus = x.vec(), minus = x.vec();
                    plus[j] += d;
                    minus[j] -= d;
                    grad[j] = (value(plus) - value(minus)) / (2 * d);
                }
                const Vec2 a = (grad * g).transpose();
                CHECK((rows[i].a - a).norm() <= 1e-4 * std::max(1.0, a.norm()));
                const double gain = terminal ? cfg.alpha_b_gain : cfg.alpha_gain;
                CHECK(std::abs(rows[i].b + gain * value(x.vec())) <= 1e-12);
            }
        }
    }
}

TEST_CASE("backup command is left alone deep in the safe set") {
    const FilterConfig cfg = default_config();
    const PolicyParams p = default_params();
    const State x{-2.5, 0.1, std::numbers::pi};
    for (int id = 0; id < 2; ++id) {
        const Input ub = policy_control(PolicyId{id}, x, kCone, p);
        const FlowResult flow = integrate_backup_flow(x, PolicyId{id}, kCone, p, cfg.horizon, cfg.n_tau);
        const FlowMargins m = flow_margins(flow, kCone, p);
        CHECK(m.min_flow > 0.0);
        CHECK(m.terminal > 0.0);
        const FilterOutput out = filter(x, ub, PolicyId{id}, kCone, cfg, p);
        CHECK(out.feasible);
        CHECK(out.intervention <= 1e-6);
    }
}

TEST_CASE("minimal intervention is bitwise") {
    const FilterConfig cfg = default_config();
    const PolicyParams p = default_params();
    Rng rng(4);
    int exercised = 0;
    for (int i = 0; i < 300; ++i) {
        const State x{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-3, 3)};
        if (h_distance(x, kCone) < 0.05)
            continue;
        const PolicyId pid{static_cast<int>(rng.index(3))};
        const Input ud{rng.uniform(-0.5, 0.5), rng.uniform(-1, 1)};
        const FlowResult flow = integrate_backup_flow(x, pid, kCone, p, cfg.horizon, cfg.n_tau);
        const auto rows = assemble_constraints(flow, x, kCone, cfg, p);
        const FilterOutput out = filter(x, ud, pid, kCone, cfg, p);
        CHECK(std::abs(out.u_safe.v) <= cfg.bounds.v_max);
        CHECK(std::abs(out.u_safe.omega) <= cfg.bounds.omega_max);
        CHECK(out.h_now == h_distance(x, kCone));
        if (rows_hold(rows, ud)) {
            ++exercised;
            CHECK(out.u_safe == ud);
            CHECK(out.intervention == 0.0);
        }
    }
    CHECK(exercised > 50);
}

TEST_CASE("out-of-bounds command is clamped before projection") {
    const FilterOutput out = filter({-30, 0, 3.14159}, {3.0, -9.0}, PolicyId{0}, kCone, default_config(),
                                    default_params());
    CHECK(out.u_desired == Input{0.5, -1.0});
    CHECK(out.u_safe == Input{0.5, -1.0});
}

TEST_CASE("larger class-K gain only relaxes the rows") {
    const PolicyParams p = default_params();
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
        const State x{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-3, 3)};
        if (h_distance(x, kCone) < 0.05)
            continue;
        FilterConfig lo = default_config(), hi = default_config();
        hi.alpha_gain = 3.0;
        hi.alpha_b_gain = 3.0;
        const FlowResult flow = integrate_backup_flow(x, PolicyId{1}, kCone, p, lo.horizon, lo.n_tau);
        const auto a = assemble_constraints(flow, x, kCone, lo, p);
        const auto b = assemble_constraints(flow, x, kCone, hi, p);
        const FlowMargins m = flow_margins(flow, kCone, p);
        if (m.min_flow < 0 || m.terminal < 0)
            continue;
        for (std::size_t k = 0; k < a.size(); ++k)
            CHECK(b[k].b <= a[k].b);
        const Input ud{0.5, 0.0};
        const double ia = filter(x, ud, PolicyId{1}, kCone, lo, p).intervention;
        const double ib = filter(x, ud, PolicyId{1}, kCone, hi, p).intervention;
        CHECK(ib <= ia + 1e-12);
    }
}

TEST_CASE("infeasible or degenerate input falls back to the backup control") {
    const FilterConfig cfg = default_config();
    const PolicyParams p = default_params();
    // Inside the obstacle: the flow margins are negative and the QP cannot recover.
    const State inside{0.1, 0.05, 0.0};
    const FilterOutput a = filter(inside, {0.5, 0.0}, PolicyId{2}, kCone, cfg, p);
    CHECK_FALSE(a.feasible);
    CHECK(a.u_safe == policy_control(PolicyId{2}, inside, kCone, p));

    const State center{0, 0, 0};
    const FilterOutput b = filter(center, {0.5, 0.0}, PolicyId{0}, kCone, cfg, p);
    CHECK_FALSE(b.feasible);
    CHECK(std::abs(b.u_safe.v) <= cfg.bounds.v_max);
}

TEST_CASE("adversarial command from 0.3 m stays outside the obstacle") {
    const FilterConfig cfg = default_config();
    const PolicyParams p = default_params();
    State x{-0.8, 0.0, 0.0};
    REQUIRE(h_distance(x, kCone) == doctest::Approx(0.3));
    REQUIRE(in_implicit_safe_set(x, PolicyId{1}, std::span<const Obstacle>(&kCone, 1), cfg, p));
    double min_h = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 600; ++k) {
        const FilterOutput out = filter(x, {0.5, 0.0}, PolicyId{1}, kCone, cfg, p);
        x = step_constant(x, out.u_safe, 0.05);
        min_h = std::min(min_h, h_distance(x, kCone));
    }
    CHECK(min_h >= 0.0);
}

TEST_CASE("implicit safe set membership") {
    const FilterConfig cfg = default_config();
    const PolicyParams p = default_params();
    const std::span<const Obstacle> one(&kCone, 1);
    CHECK(in_implicit_safe_set({-3, 0.25, 0}, PolicyId{0}, one, cfg, p));
    // Reversing away from a pose that faces away drives straight into the cone.
    CHECK_FALSE(in_implicit_safe_set({0.6, 0.0, 0.0}, PolicyId{2}, one, cfg, p));
}
