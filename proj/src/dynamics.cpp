#include "mbcbf/dynamics.hpp"

#include "mbcbf/error.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mbcbf {

void InputBounds::validate() const {
    if (!(std::isfinite(v_max) && v_max > 0.0) || !(std::isfinite(omega_max) && omega_max > 0.0))
        throw std::invalid_argument("input bounds must be strictly positive");
}

bool InputBounds::contains(const Input& u) const {
    return std::abs(u.v) <= v_max && std::abs(u.omega) <= omega_max;
}

Input InputBounds::clamp(const Input& u) const {
    return {std::clamp(u.v, -v_max, v_max), std::clamp(u.omega, -omega_max, omega_max)};
}

Vec3 drift(const State&) { return Vec3::Zero(); }

Mat32 input_matrix(const State& s) {
    Mat32 g;
    g << std::cos(s.theta), 0.0,
         std::sin(s.theta), 0.0,
         0.0, 1.0;
    return g;
}

StateDerivative vector_field(const State& s, const Input& u) {
    return {u.v * std::cos(s.theta), u.v * std::sin(s.theta), u.omega};
}

bool all_finite(const State& s) {
    return std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.theta);
}

namespace {

Vec3 closed_loop_field(const State& s, const ControlLaw& policy) {
    const Input u = policy(s);
    if (!std::isfinite(u.v) || !std::isfinite(u.omega))
        throw IntegrationError("policy returned a non-finite input");
    return vector_field(s, u);
}

} // namespace

State step_closed_loop(const State& s, const ControlLaw& policy, double dt) {
    if (!(dt > 0.0))
        throw std::invalid_argument("step_closed_loop: dt must be positive");
    const Vec3 x = s.vec();
    const Vec3 k1 = closed_loop_field(s, policy);
    const Vec3 k2 = closed_loop_field(State::from(x + 0.5 * dt * k1), policy);
    const Vec3 k3 = closed_loop_field(State::from(x + 0.5 * dt * k2), policy);
    const Vec3 k4 = closed_loop_field(State::from(x + dt * k3), policy);
    const State next = State::from(x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    if (!all_finite(next))
        throw IntegrationError("closed-loop step produced a non-finite state");
    return next;
}

State step_constant(const State& s, const Input& u, double dt) {
    return step_closed_loop(s, [&u](const State&) { return u; }, dt);
}

Mat3 closed_loop_jacobian(const State& s, const ControlLaw& policy, double step) {
    Mat3 jac;
    const Vec3 x = s.vec();
    for (int j = 0; j < 3; ++j) {
        Vec3 plus = x;
        Vec3 minus = x;
        plus[j] += step;
        minus[j] -= step;
        jac.col(j) = (closed_loop_field(State::from(plus), policy) -
                      closed_loop_field(State::from(minus), policy)) / (2.0 * step);
    }
    if (!jac.allFinite())
        throw IntegrationError("closed-loop Jacobian has non-finite entries");
    return jac;
}

} // namespace mbcbf
