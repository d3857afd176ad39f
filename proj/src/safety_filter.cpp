#include "mbcbf/safety_filter.hpp"

#include "mbcbf/error.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mbcbf {

void FilterConfig::validate() const {
    bounds.validate();
    if (!(horizon > 0.0) || n_tau < 1)
        throw std::invalid_argument("filter horizon must be positive and n_tau >= 1");
    if (!(alpha_gain > 0.0) || !(alpha_b_gain > 0.0))
        throw std::invalid_argument("class-K gains must be positive");
    if (!(tighten_margin >= 0.0))
        throw std::invalid_argument("tighten_margin must be non-negative");
}

FlowMargins flow_margins(const FlowResult& flow, const Obstacle& o, const PolicyParams& params) {
    FlowMargins m{std::numeric_limits<double>::infinity(), 0.0};
    for (const auto& sample : flow.samples)
        m.min_flow = std::min(m.min_flow, h_distance(sample.state, o));
    m.terminal = policy_barrier(flow.policy, flow.terminal().state, o, params);
    return m;
}

std::vector<Halfplane> assemble_constraints(const FlowResult& flow, const State& x,
                                            const Obstacle& o, const FilterConfig& cfg,
                                            const PolicyParams& params) {
    const Mat32 g = input_matrix(x);
    const Vec3 f = drift(x);
    std::vector<Halfplane> rows;
    rows.reserve(flow.samples.size() + 1);
    try {
        for (const auto& sample : flow.samples) {
            const RowVec3 grad = h_distance_gradient(sample.state, o) * sample.sensitivity;
            const double h = h_distance(sample.state, o) - cfg.tighten_margin;
            rows.push_back({(grad * g).transpose(), -cfg.alpha_gain * h - grad.dot(f)});
        }
        const FlowSample& end = flow.terminal();
        const RowVec3 grad = policy_barrier_gradient(flow.policy, end.state, o, params) * end.sensitivity;
        const double hb = policy_barrier(flow.policy, end.state, o, params);
        rows.push_back({(grad * g).transpose(), -cfg.alpha_b_gain * hb - grad.dot(f)});
    } catch (const DegenerateGeometry& e) {
        throw FlowError(std::string("constraint assembly degenerate: ") + e.what());
    }
    return rows;
}

bool in_implicit_safe_set(const State& x, PolicyId id, std::span<const Obstacle> obstacles,
                          const FilterConfig& cfg, const PolicyParams& params) {
    try {
        for (const auto& o : obstacles) {
            const FlowResult flow = integrate_backup_flow(x, id, o, params, cfg.horizon, cfg.n_tau);
            const FlowMargins m = flow_margins(flow, o, params);
            if (m.min_flow < 0.0 || m.terminal < 0.0)
                return false;
        }
    } catch (const FlowError&) {
        return false;
    } catch (const DegenerateGeometry&) {
        return false;
    }
    return true;
}

namespace {

Input fallback_input(const State& x, PolicyId active, std::span<const Obstacle> obstacles,
                     const FilterConfig& cfg, const PolicyParams& params) {
    if (obstacles.empty())
        return {};
    try {
        const Obstacle& o = obstacles[nearest_obstacle(x, obstacles)];
        return cfg.bounds.clamp(policy_control(active, x, o, params));
    } catch (const DegenerateGeometry&) {
        return {};
    }
}

} // namespace

FilterOutput filter(const State& x, const Input& u_d, PolicyId active,
                    std::span<const Obstacle> obstacles, const FilterConfig& cfg,
                    const PolicyParams& params) {
    check_policy(active);
    FilterOutput out;
    out.u_desired = cfg.bounds.clamp(u_d);
    out.h_now = h_distance(x, obstacles);
    out.min_flow_margin = std::numeric_limits<double>::infinity();
    out.terminal_margin = std::numeric_limits<double>::infinity();

    QProblem qp{out.u_desired, {}, cfg.bounds};
    bool flow_ok = true;
    try {
        for (const auto& o : obstacles) {
            const FlowResult flow = integrate_backup_flow(x, active, o, params, cfg.horizon, cfg.n_tau);
            const FlowMargins m = flow_margins(flow, o, params);
            out.min_flow_margin = std::min(out.min_flow_margin, m.min_flow);
            out.terminal_margin = std::min(out.terminal_margin, m.terminal);
            auto rows = assemble_constraints(flow, x, o, cfg, params);
            qp.ineqs.insert(qp.ineqs.end(), rows.begin(), rows.end());
        }
    } catch (const FlowError&) {
        flow_ok = false;
    } catch (const DegenerateGeometry&) {
        flow_ok = false;
    }
    out.n_constraints = qp.ineqs.size();

    if (flow_ok) {
        const QSolution sol = solve(qp);
        if (sol.feasible) {
            out.feasible = true;
            out.u_safe = sol.u_star;
        }
    }
    if (!out.feasible)
        out.u_safe = fallback_input(x, active, obstacles, cfg, params);

    out.intervention = (out.u_safe.vec() - out.u_desired.vec()).norm();
    return out;
}

FilterOutput filter(const State& x, const Input& u_d, PolicyId active, const Obstacle& o,
                    const FilterConfig& cfg, const PolicyParams& params) {
    return filter(x, u_d, active, std::span<const Obstacle>(&o, 1), cfg, params);
}

} // namespace mbcbf
