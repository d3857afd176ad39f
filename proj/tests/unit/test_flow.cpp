#include <doctest.h>

#include "mbcbf/flow.hpp"
#include "mbcbf/random.hpp"

#include <Eigen/LU>

#include <cmath>

using namespace mbcbf;

namespace {

const Obstacle kCone{Vec2::Zero(), 0.5, Vec2::Zero()};

State random_free_state(Rng& rng) {
    for (;;) {
        State s{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3.2, 3.2)};
        if (h_distance(s, kCone) > 0.3)
            return s;
    }
}

} // namespace

TEST_CASE("stationary law keeps state and identity sensitivity") {
    const State x0{1.0, -2.0, 0.3};
    const FlowResult r = integrate_flow(
        x0, [](const State&) { return Input{0, 0}; }, [](const State&) { return Mat3::Zero().eval(); },
        2.0, 20);
    REQUIRE(r.samples.size() == 21);
    for (const FlowSample& s : r.samples) {
        CHECK(s.state == x0);
        CHECK(s.sensitivity == Mat3::Identity());
    }
    CHECK(r.terminal().tau == doctest::Approx(2.0));
}

TEST_CASE("retreat from a radial pose follows the closed-form line") {
    PolicyParams p;
    p.epsilon = 0.1;
    const FlowResult r = integrate_backup_flow({2, 0, 0}, PolicyId{1}, kCone, p, 2.0, 20);
    const double speed = p.bounds.v_max * std::tanh(10.0);
    for (const FlowSample& s : r.samples) {
        CHECK(std::abs(s.state.x - (2 + speed * s.tau)) < 1e-8);
        CHECK(s.state.y == 0.0);
        CHECK(s.state.theta == 0.0);
    }
}

TEST_CASE("first sample is the initial state") {
    PolicyParams p;
    Rng rng(2);
    for (int id = 0; id < kPolicyCount; ++id) {
        const State x0 = random_free_state(rng);
        const FlowResult r = integrate_backup_flow(x0, PolicyId{id}, kCone, p, 2.0, 20);
        CHECK(r.samples.front().tau == 0.0);
        CHECK(r.samples.front().state == x0);
        CHECK(r.samples.front().sensitivity == Mat3::Identity());
        CHECK(r.policy == PolicyId{id});
    }
}

TEST_CASE("sensitivities stay invertible and converge under step halving") {
    PolicyParams p;
    Rng rng(8);
    for (int i = 0; i < 20; ++i) {
        const State x0 = random_free_state(rng);
        for (int id = 0; id < kPolicyCount; ++id) {
            const FlowResult a = integrate_backup_flow(x0, PolicyId{id}, kCone, p, 2.0, 20, 0.01);
            const FlowResult b = integrate_backup_flow(x0, PolicyId{id}, kCone, p, 2.0, 20, 0.005);
            for (std::size_t k = 0; k < a.samples.size(); ++k) {
                CHECK(a.samples[k].sensitivity.determinant() > 0.0);
                CHECK((a.samples[k].state.vec() - b.samples[k].state.vec()).norm() <= 1e-6);
                CHECK((a.samples[k].sensitivity - b.samples[k].sensitivity).norm() <= 1e-6);
            }
        }
    }
}

TEST_CASE("variational sensitivity matches perturbed flows") {
    PolicyParams p;
    Rng rng(21);
    for (int i = 0; i < 30; ++i) {
        const State x0 = random_free_state(rng);
        const FlowResult r = integrate_backup_flow(x0, PolicyId{0}, kCone, p, 1.0, 10);
        const Mat3& Q = r.terminal().sensitivity;

        // Oracle built here from state-only endpoints.
        Mat3 fd;
        const double d = 1e-5;
        for (int j = 0; j < 3; ++j) {
            Vec3 plus = x0.vec(), minus = x0.vec();
            plus[j] += d;
            minus[j] -= d;
            fd.col(j) = (backup_flow_endpoint(State::from(plus), PolicyId{0}, kCone, p, 1.0).vec() -
                         backup_flow_endpoint(State::from(minus), PolicyId{0}, kCone, p, 1.0).vec()) /
                        (2 * d);
        }
        CHECK((Q - fd).norm() <= 1e-4 * fd.norm());
        const Mat3 lib = sensitivity_fd_oracle(x0, PolicyId{0}, kCone, p, 1.0);
        CHECK((lib - fd).norm() <= 1e-6 * fd.norm());
    }
}

TEST_CASE("endpoint agrees with the joint integration") {
    PolicyParams p;
    const State x0{-1.5, 0.4, 0.2};
    for (int id = 0; id < kPolicyCount; ++id) {
        const FlowResult r = integrate_backup_flow(x0, PolicyId{id}, kCone, p, 2.0, 20);
        const State e = backup_flow_endpoint(x0, PolicyId{id}, kCone, p, 2.0);
        CHECK((r.terminal().state.vec() - e.vec()).norm() < 1e-12);
    }
}
