#pragma once

#include "mbcbf/dynamics.hpp"

#include <compare>
#include <span>
#include <string>

namespace mbcbf {

/// Circular obstacle; radius already includes the robot buffer.
struct Obstacle {
    Vec2 center = Vec2::Zero();
    double radius = 0.5;
    Vec2 velocity = Vec2::Zero();

    void validate() const;
};

struct PolicyParams {
    InputBounds bounds;
    double epsilon = 0.1;

    void validate() const;
};

/// Index of a backup controller in the registry.
struct PolicyId {
    int index = 0;

    auto operator<=>(const PolicyId&) const = default;
};

/// Number of backup controllers in the default registry (turn-away, retreat, reverse).
inline constexpr int kPolicyCount = 3;

bool is_valid(PolicyId id);
/// Throws std::out_of_range for ids outside the registry.
void check_policy(PolicyId id);
std::string policy_name(PolicyId id);

/// Unit radial direction n, heading q and its left normal r.
struct Geometry {
    Vec2 n;
    Vec2 q;
    Vec2 r;
    double distance = 0.0;
};

/// Positions closer than this to an obstacle center are treated as degenerate.
inline constexpr double kDegenerateDistance = 1e-9;

/// h(x) = |p - p_o| - R_o.
double h_distance(const State& s, const Obstacle& o);
/// Smallest h over a set of obstacles; +inf when the set is empty.
double h_distance(const State& s, std::span<const Obstacle> obstacles);
/// Index of the obstacle with smallest h (0 when the set is empty).
std::size_t nearest_obstacle(const State& s, std::span<const Obstacle> obstacles);
/// dh/dx. Throws DegenerateGeometry at the obstacle center.
RowVec3 h_distance_gradient(const State& s, const Obstacle& o);

/// Throws DegenerateGeometry when p == p_o.
Geometry geometry_vectors(const State& s, const Obstacle& o);

Input policy_control(PolicyId id, const State& s, const Obstacle& o, const PolicyParams& params);

/// Backup barrier h_b for the given policy (m/s for 0 and 2, m for 1).
double policy_barrier(PolicyId id, const State& s, const Obstacle& o, const PolicyParams& params);
RowVec3 policy_barrier_gradient(PolicyId id, const State& s, const Obstacle& o,
                                const PolicyParams& params);

/// Analytic Jacobian of the closed loop x -> g(x) k_b(x).
Mat3 policy_closed_loop_jacobian(PolicyId id, const State& s, const Obstacle& o,
                                 const PolicyParams& params);

/// Wraps policy_control as a ControlLaw bound to one obstacle.
ControlLaw policy_law(PolicyId id, const Obstacle& o, const PolicyParams& params);

} // namespace mbcbf
