#pragma once

#include "mbcbf/dynamics.hpp"

#include <vector>

namespace mbcbf {

/// Linear inequality a^T u >= b on the 2-D input.
struct Halfplane {
    Vec2 a = Vec2::Zero();
    double b = 0.0;
};

/// min |u - target|^2  s.t.  a_i^T u >= b_i,  |v| <= v_max,  |omega| <= omega_max.
struct QProblem {
    Input target;
    std::vector<Halfplane> ineqs;
    InputBounds box;
};

struct QSolution {
    Input u_star;
    bool feasible = false;
    /// Tight constraints. Indices >= ineqs.size() refer to box faces in the order
    /// v >= -v_max, v <= v_max, omega >= -omega_max, omega <= omega_max.
    std::vector<int> active_set;
    double objective = 0.0;
};

/// Constraint tolerance used when reporting feasibility and active sets.
inline constexpr double kQpTolerance = 1e-9;

/// Dual active-set (Goldfarb-Idnani) projection specialised to two variables.
QSolution solve(const QProblem& problem);

/// Brute-force reference: enumerates every active set of size <= 2 (box faces
/// included) and keeps the best feasible candidate. Intended for <= 40 constraints.
QSolution kkt_enumeration_oracle(const QProblem& problem);

} // namespace mbcbf
