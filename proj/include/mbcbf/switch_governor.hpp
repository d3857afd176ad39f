#pragma once

#include "mbcbf/safety_filter.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace mbcbf {

struct GovernorConfig {
    int dwell_ticks = 10;
    /// When the argmax is rejected, also try the remaining candidates in reward order.
    bool try_runners_up = false;
};

struct SwitchState {
    PolicyId active;
    int dwell_remaining = 0;
    std::int64_t last_switch_tick = -1;
    std::int64_t tick = 0;
    std::int64_t rejected_switches = 0;
};

struct SwitchEvent {
    std::int64_t tick = 0;
    PolicyId from;
    PolicyId to;
    std::vector<double> rewards;
    bool validated = false;
};

/// Argmax of the rewards; ties go to `active`, then to the lowest index.
PolicyId propose(std::span<const double> rewards, PolicyId active);

/// The candidate's backup flow from x keeps every sampled h and its terminal h_b
/// non-negative, and the candidate's BCBF-QP is feasible at u_d.
bool validate_switch(const State& x, PolicyId candidate, const Input& u_d,
                     std::span<const Obstacle> obstacles, const FilterConfig& cfg,
                     const PolicyParams& params);

struct GovernorStep {
    SwitchState state;
    std::optional<SwitchEvent> event;
};

GovernorStep governor_step(const SwitchState& current, std::span<const double> rewards,
                           const State& x, const Input& u_d, std::span<const Obstacle> obstacles,
                           const FilterConfig& cfg, const PolicyParams& params,
                           const GovernorConfig& gcfg);

} // namespace mbcbf
