#include "mbcbf/switch_governor.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace mbcbf {

PolicyId propose(std::span<const double> rewards, PolicyId active) {
    if (rewards.empty())
        throw std::invalid_argument("propose: empty reward vector");
    int best = 0;
    for (int i = 1; i < static_cast<int>(rewards.size()); ++i) {
        if (rewards[i] > rewards[best])
            best = i;
    }
    const int a = active.index;
    if (a >= 0 && a < static_cast<int>(rewards.size()) && rewards[a] == rewards[best])
        best = a;
    return {best};
}

bool validate_switch(const State& x, PolicyId candidate, const Input& u_d,
                     std::span<const Obstacle> obstacles, const FilterConfig& cfg,
                     const PolicyParams& params) {
    if (!is_valid(candidate))
        return false;
    if (!in_implicit_safe_set(x, candidate, obstacles, cfg, params))
        return false;
    return filter(x, u_d, candidate, obstacles, cfg, params).feasible;
}

GovernorStep governor_step(const SwitchState& current, std::span<const double> rewards,
                           const State& x, const Input& u_d, std::span<const Obstacle> obstacles,
                           const FilterConfig& cfg, const PolicyParams& params,
                           const GovernorConfig& gcfg) {
    GovernorStep out{current, std::nullopt};
    SwitchState& st = out.state;
    const std::int64_t tick = st.tick++;

    if (st.dwell_remaining > 0) {
        --st.dwell_remaining;
        return out;
    }

    const PolicyId proposal = propose(rewards, st.active);
    if (proposal == st.active)
        return out;

    std::vector<PolicyId> candidates{proposal};
    if (gcfg.try_runners_up) {
        std::vector<int> order(rewards.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return rewards[a] > rewards[b]; });
        for (int i : order) {
            // Runners-up must still beat the incumbent.
            if (i != proposal.index && i != st.active.index && rewards[i] > rewards[st.active.index])
                candidates.push_back({i});
        }
    }

    for (const PolicyId cand : candidates) {
        if (validate_switch(x, cand, u_d, obstacles, cfg, params)) {
            out.event = SwitchEvent{tick, st.active, cand,
                                    std::vector<double>(rewards.begin(), rewards.end()), true};
            st.active = cand;
            st.dwell_remaining = gcfg.dwell_ticks;
            st.last_switch_tick = tick;
            return out;
        }
    }
    ++st.rejected_switches;
    return out;
}

} // namespace mbcbf
