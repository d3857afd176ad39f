#pragma once

#include "mbcbf/backup_policies.hpp"
#include "mbcbf/flow.hpp"
#include "mbcbf/qp.hpp"

#include <span>
#include <vector>

namespace mbcbf {

enum class InfeasibleFallback { apply_backup };

struct FilterConfig {
    double horizon = 2.0;        ///< T, seconds
    int n_tau = 20;              ///< number of flow samples after tau = 0
    double alpha_gain = 1.0;     ///< linear class-K gain on h, 1/s
    double alpha_b_gain = 1.0;   ///< linear class-K gain on h_b, 1/s
    double tighten_margin = 0.0; ///< subtracted from every sampled h along the flow
    InputBounds bounds;
    InfeasibleFallback fallback = InfeasibleFallback::apply_backup;

    void validate() const;
};

struct FilterOutput {
    Input u_safe;
    Input u_desired; ///< u_d after clamping to the bounds
    bool feasible = false;
    double h_now = 0.0;
    double min_flow_margin = 0.0;
    double terminal_margin = 0.0;
    double intervention = 0.0;
    std::size_t n_constraints = 0;
};

struct FlowMargins {
    double min_flow = 0.0; ///< min_i h(phi_b(tau_i, x))
    double terminal = 0.0; ///< h_b(phi_b(T, x))
};

FlowMargins flow_margins(const FlowResult& flow, const Obstacle& o, const PolicyParams& params);

/// Discretised BCBF rows: one per tau_i on h, plus a terminal row on h_b.
std::vector<Halfplane> assemble_constraints(const FlowResult& flow, const State& x,
                                            const Obstacle& o, const FilterConfig& cfg,
                                            const PolicyParams& params);

/// True when every sampled flow margin and the terminal margin are non-negative
/// for each obstacle, i.e. x lies in the implicit safe set of `id`.
bool in_implicit_safe_set(const State& x, PolicyId id, std::span<const Obstacle> obstacles,
                          const FilterConfig& cfg, const PolicyParams& params);

/// BCBF-QP safety filter. Falls back to the active backup control when the flow
/// is degenerate or the QP is infeasible.
FilterOutput filter(const State& x, const Input& u_d, PolicyId active,
                    std::span<const Obstacle> obstacles, const FilterConfig& cfg,
                    const PolicyParams& params);

FilterOutput filter(const State& x, const Input& u_d, PolicyId active, const Obstacle& o,
                    const FilterConfig& cfg, const PolicyParams& params);

} // namespace mbcbf
