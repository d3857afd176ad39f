#pragma once

#include "mbcbf/backup_policies.hpp"
#include "mbcbf/random.hpp"
#include "mbcbf/safety_filter.hpp"
#include "mbcbf/switch_governor.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace mbcbf {

struct ArenaBounds {
    double x_min = -4.0;
    double x_max = 4.0;
    double y_min = -4.0;
    double y_max = 4.0;

    bool contains(const Vec2& p) const {
        return p.x() >= x_min && p.x() <= x_max && p.y() >= y_min && p.y() <= y_max;
    }
};

inline constexpr int kScenarioVersion = 1;

/// Everything that defines a simulated world and its safety stack.
struct Scenario {
    std::string name = "cone";
    ArenaBounds arena;
    /// Physical obstacles; see inflated_obstacles() for the buffered radii.
    std::vector<Obstacle> obstacles = {Obstacle{Vec2::Zero(), 0.15, Vec2::Zero()}};
    double robot_half_length = 0.35;
    State start{-3.0, 0.25, 0.0};
    PolicyId initial_policy{0};
    InputBounds bounds{0.5, 1.0};
    double epsilon = 0.1;
    double horizon = 2.0;
    int n_tau = 20;
    double alpha_gain = 1.0;
    double alpha_b_gain = 1.0;
    double tighten_margin = 0.0;
    int dwell_ticks = 10;
    bool try_runners_up = false;
    double tick_dt = 0.05;
    double goal_horizon = 1.0;

    std::vector<Obstacle> inflated_obstacles() const;
    FilterConfig filter_config() const;
    PolicyParams policy_params() const;
    GovernorConfig governor_config() const;

    /// Parameter checks only (no flow integration).
    void validate_parameters() const;
    /// Parameter checks plus implicit-safe-set membership of `start` under
    /// `initial_policy`. Throws ScenarioError.
    void validate() const;
};

/// Random start facing roughly toward the first obstacle, inside the arena and
/// inside the implicit safe set of sc.initial_policy.
State sample_start(const Scenario& sc, Rng& rng, double min_distance = 2.0,
                   double max_distance = 3.4, double heading_spread = 0.785);

nlohmann::json to_json(const Scenario& sc);
Scenario scenario_from_json(const nlohmann::json& j);
Scenario load_scenario(const std::filesystem::path& path);
void save_scenario(const Scenario& sc, const std::filesystem::path& path);

nlohmann::json to_json(const State& s);
State state_from_json(const nlohmann::json& j);

} // namespace mbcbf
