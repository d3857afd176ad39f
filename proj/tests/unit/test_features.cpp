#include <doctest.h>

#include "mbcbf/error.hpp"
#include "mbcbf/features.hpp"

#include <cmath>
#include <vector>

using namespace mbcbf;

namespace {
const std::vector<Obstacle> kUnit = {Obstacle{Vec2::Zero(), 1.0, Vec2::Zero()}};
}

TEST_CASE("stationary robot") {
    const State x{2, 0, 0};
    const FeatureVector f = extract_features(x, vector_field(x, {0, 0}), {0, 0}, kUnit, 1.0);
    CHECK(f[0] == 2.0);
    CHECK(f[1] == 0.0);
    CHECK(f[2] == 0.0);
    CHECK(f[3] == 0.0);
    for (int i = 4; i < 10; ++i)
        CHECK(f[i] == 0.0);
    CHECK(f[10] == 1.0);
    CHECK(f[11] == 1.0);
}

TEST_CASE("straight-line goal") {
    const State x{2, 0, 0};
    const Input u{1, 0};
    const FeatureVector f = extract_features(x, vector_field(x, u), u, kUnit, 1.0);
    const State g = goal_point(x, u, 1.0);
    CHECK(g.x == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(g.y == 0.0);
    CHECK(f[11] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(f[4] == 1.0);
    CHECK(f[8] == 1.0);
    CHECK(f[6] == 0.0);
}

TEST_CASE("turning goal lands on the circular arc") {
    const State x{2, 0.5, 0.3};
    const Input u{1, 0.8};
    const double T = 1.0;
    const double R = u.v / u.omega;
    const double px = x.x + R * (std::sin(x.theta + u.omega * T) - std::sin(x.theta));
    const double py = x.y - R * (std::cos(x.theta + u.omega * T) - std::cos(x.theta));
    const FeatureVector f = extract_features(x, vector_field(x, u), u, kUnit, T);
    CHECK(std::abs(f[11] - (std::hypot(px, py) - 1.0)) < 1e-9);
}

TEST_CASE("feature order names") {
    CHECK(kFeatureOrder.front() == "x_I");
    CHECK(kFeatureOrder[10] == "h_at_x");
    CHECK(kFeatureOrder.back() == "h_at_goal");
}

TEST_CASE("history window is oldest first and only when full") {
    History h(3);
    FeatureVector f{};
    CHECK_THROWS(h.window());
    for (int i = 0; i < 5; ++i) {
        f[0] = i;
        h.push(f);
    }
    CHECK(h.full());
    const FeatureWindow w = h.window();
    CHECK(w.length() == 3);
    CHECK(w.steps(0, 0) == 2.0);
    CHECK(w.steps(0, 2) == 4.0);
    CHECK_FALSE(w.normalized);
}

TEST_CASE("normaliser standardises and refuses to run twice") {
    std::vector<FeatureVector> rows(4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < kFeatureCount; ++j)
            rows[i][j] = j == 2 ? 0.0 : i * (j + 1.0);
    const Normalizer n = Normalizer::fit(rows);
    CHECK(n.scale[2] == 1.0);
    History h(4);
    for (const auto& r : rows)
        h.push(r);
    FeatureWindow w = h.window();
    n.apply(w);
    CHECK(w.normalized);
    for (int j = 0; j < kFeatureCount; ++j) {
        CHECK(std::abs(w.steps.row(j).mean()) < 1e-12);
        if (j != 2)
            CHECK(std::abs((w.steps.row(j).array().square().mean()) - 1.0) < 1e-12);
    }
    CHECK_THROWS_AS(n.apply(w), ModelError);
}
