#include "mbcbf/backup_policies.hpp"

#include "mbcbf/error.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mbcbf {

void Obstacle::validate() const {
    if (!(std::isfinite(radius) && radius > 0.0))
        throw std::invalid_argument("obstacle radius must be positive");
    if (!center.allFinite() || !velocity.allFinite())
        throw std::invalid_argument("obstacle center and velocity must be finite");
}

void PolicyParams::validate() const {
    bounds.validate();
    if (!(std::isfinite(epsilon) && epsilon > 0.0))
        throw std::invalid_argument("policy smoothing epsilon must be positive");
}

bool is_valid(PolicyId id) { return id.index >= 0 && id.index < kPolicyCount; }

void check_policy(PolicyId id) {
    if (!is_valid(id))
        throw std::out_of_range("unknown backup policy id " + std::to_string(id.index));
}

std::string policy_name(PolicyId id) {
    switch (id.index) {
    case 0: return "turn_away_forward";
    case 1: return "straight_retreat";
    case 2: return "turn_toward_reverse";
    default: return "unknown";
    }
}

double h_distance(const State& s, const Obstacle& o) {
    return (s.position() - o.center).norm() - o.radius;
}

double h_distance(const State& s, std::span<const Obstacle> obstacles) {
    double h = std::numeric_limits<double>::infinity();
    for (const auto& o : obstacles)
        h = std::min(h, h_distance(s, o));
    return h;
}

std::size_t nearest_obstacle(const State& s, std::span<const Obstacle> obstacles) {
    std::size_t best = 0;
    double h = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < obstacles.size(); ++i) {
        const double hi = h_distance(s, obstacles[i]);
        if (hi < h) {
            h = hi;
            best = i;
        }
    }
    return best;
}

Geometry geometry_vectors(const State& s, const Obstacle& o) {
    const Vec2 rel = s.position() - o.center;
    const double d = rel.norm();
    if (!(d > kDegenerateDistance))
        throw DegenerateGeometry("robot position coincides with obstacle center");
    const double c = std::cos(s.theta);
    const double sn = std::sin(s.theta);
    return {rel / d, Vec2(c, sn), Vec2(-sn, c), d};
}

RowVec3 h_distance_gradient(const State& s, const Obstacle& o) {
    const Geometry g = geometry_vectors(s, o);
    return {g.n[0], g.n[1], 0.0};
}

namespace {

// Sign of the turn-away law: +1 for policy 0, -1 for its reversed twin.
double turn_sign(PolicyId id) { return id.index == 2 ? -1.0 : 1.0; }

} // namespace

Input policy_control(PolicyId id, const State& s, const Obstacle& o, const PolicyParams& params) {
    check_policy(id);
    const Geometry g = geometry_vectors(s, o);
    const auto& b = params.bounds;
    if (id.index == 1)
        return {b.v_max * std::tanh(g.n.dot(g.q) / params.epsilon), 0.0};
    const double sign = turn_sign(id);
    return {sign * b.v_max, sign * b.omega_max * std::tanh(g.n.dot(g.r) / params.epsilon)};
}

double policy_barrier(PolicyId id, const State& s, const Obstacle& o, const PolicyParams& params) {
    check_policy(id);
    if (id.index == 1)
        return h_distance(s, o);
    const Geometry g = geometry_vectors(s, o);
    const double h0 = g.n.dot(g.q * params.bounds.v_max - o.velocity);
    return turn_sign(id) * h0;
}

RowVec3 policy_barrier_gradient(PolicyId id, const State& s, const Obstacle& o,
                                const PolicyParams& params) {
    check_policy(id);
    if (id.index == 1)
        return h_distance_gradient(s, o);
    const Geometry g = geometry_vectors(s, o);
    const Eigen::Matrix2d proj = Eigen::Matrix2d::Identity() - g.n * g.n.transpose();
    const Vec2 rel_vel = g.q * params.bounds.v_max - o.velocity;
    const Vec2 dp = proj * rel_vel / g.distance;
    const double dtheta = g.n.dot(g.r) * params.bounds.v_max;
    return turn_sign(id) * RowVec3(dp[0], dp[1], dtheta);
}

Mat3 policy_closed_loop_jacobian(PolicyId id, const State& s, const Obstacle& o,
                                 const PolicyParams& params) {
    check_policy(id);
    const Geometry g = geometry_vectors(s, o);
    const Eigen::Matrix2d proj = Eigen::Matrix2d::Identity() - g.n * g.n.transpose();
    const auto& b = params.bounds;
    const double eps = params.epsilon;
    const double c = g.q[0];
    const double sn = g.q[1];

    Mat3 jac = Mat3::Zero();
    if (id.index == 1) {
        const double w = g.n.dot(g.q) / eps;
        const double th = std::tanh(w);
        const double v = b.v_max * th;
        const Vec2 dw_dp = proj * g.q / (g.distance * eps);
        const double dw_dth = g.n.dot(g.r) / eps;
        const double scale = b.v_max * (1.0 - th * th);
        const RowVec3 dv(scale * dw_dp[0], scale * dw_dp[1], scale * dw_dth);
        jac.row(0) = c * dv;
        jac.row(1) = sn * dv;
        jac(0, 2) += -v * sn;
        jac(1, 2) += v * c;
        return jac;
    }

    const double sign = turn_sign(id);
    const double v = sign * b.v_max;
    const double z = g.n.dot(g.r) / eps;
    const double th = std::tanh(z);
    const Vec2 dz_dp = proj * g.r / (g.distance * eps);
    const double dz_dth = -g.n.dot(g.q) / eps;
    const double scale = sign * b.omega_max * (1.0 - th * th);
    jac(0, 2) = -v * sn;
    jac(1, 2) = v * c;
    jac.row(2) = RowVec3(scale * dz_dp[0], scale * dz_dp[1], scale * dz_dth);
    return jac;
}

ControlLaw policy_law(PolicyId id, const Obstacle& o, const PolicyParams& params) {
    check_policy(id);
    return [id, o, params](const State& s) { return policy_control(id, s, o, params); };
}

} // namespace mbcbf
