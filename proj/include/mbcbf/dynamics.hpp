#pragma once

#include <Eigen/Core>

#include <functional>

namespace mbcbf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat32 = Eigen::Matrix<double, 3, 2>;
using RowVec2 = Eigen::RowVector2d;
using RowVec3 = Eigen::RowVector3d;

/// Planar unicycle pose. theta is never wrapped.
struct State {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;

    Vec3 vec() const { return {x, y, theta}; }
    Vec2 position() const { return {x, y}; }
    static State from(const Vec3& v) { return {v[0], v[1], v[2]}; }

    bool operator==(const State&) const = default;
};

/// Velocity command (v, omega).
struct Input {
    double v = 0.0;
    double omega = 0.0;

    Vec2 vec() const { return {v, omega}; }
    static Input from(const Vec2& u) { return {u[0], u[1]}; }

    bool operator==(const Input&) const = default;
};

struct InputBounds {
    double v_max = 0.5;
    double omega_max = 1.0;

    /// Throws std::invalid_argument unless both limits are strictly positive and finite.
    void validate() const;
    bool contains(const Input& u) const;
    Input clamp(const Input& u) const;
};

using StateDerivative = Vec3;

/// State feedback law x -> u.
using ControlLaw = std::function<Input(const State&)>;

/// Drift term of the unicycle; identically zero.
Vec3 drift(const State& s);

/// Input matrix g(x).
Mat32 input_matrix(const State& s);

/// x' = f(x) + g(x) u.
StateDerivative vector_field(const State& s, const Input& u);

/// One classical RK4 step of x' = f(x) + g(x) policy(x).
/// Throws IntegrationError when a stage produces a non-finite value.
State step_closed_loop(const State& s, const ControlLaw& policy, double dt);

/// RK4 step with the input held constant over the step.
State step_constant(const State& s, const Input& u, double dt);

/// Central-difference Jacobian of x -> f(x) + g(x) policy(x).
Mat3 closed_loop_jacobian(const State& s, const ControlLaw& policy, double step = 1e-6);

bool all_finite(const State& s);

} // namespace mbcbf
