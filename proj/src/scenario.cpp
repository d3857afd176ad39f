#include "mbcbf/scenario.hpp"

#include "mbcbf/error.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace mbcbf {

using nlohmann::json;

std::vector<Obstacle> Scenario::inflated_obstacles() const {
    std::vector<Obstacle> out = obstacles;
    for (auto& o : out)
        o.radius += robot_half_length;
    return out;
}

FilterConfig Scenario::filter_config() const {
    FilterConfig cfg;
    cfg.horizon = horizon;
    cfg.n_tau = n_tau;
    cfg.alpha_gain = alpha_gain;
    cfg.alpha_b_gain = alpha_b_gain;
    cfg.tighten_margin = tighten_margin;
    cfg.bounds = bounds;
    return cfg;
}

PolicyParams Scenario::policy_params() const { return {bounds, epsilon}; }

GovernorConfig Scenario::governor_config() const { return {dwell_ticks, try_runners_up}; }

void Scenario::validate_parameters() const {
    try {
        filter_config().validate();
        policy_params().validate();
        for (const auto& o : inflated_obstacles())
            o.validate();
    } catch (const std::invalid_argument& e) {
        throw ScenarioError(std::string("invalid scenario: ") + e.what());
    }
    if (obstacles.empty())
        throw ScenarioError("scenario needs at least one obstacle");
    if (!(tick_dt > 0.0))
        throw ScenarioError("tick_dt must be positive");
    if (robot_half_length < 0.0)
        throw ScenarioError("robot_half_length must be non-negative");
    if (dwell_ticks < 0)
        throw ScenarioError("dwell_ticks must be non-negative");
    if (!is_valid(initial_policy))
        throw ScenarioError("initial policy is not in the registry");
    if (!all_finite(start))
        throw ScenarioError("start state must be finite");
}

void Scenario::validate() const {
    validate_parameters();
    const auto obs = inflated_obstacles();
    if (!in_implicit_safe_set(start, initial_policy, obs, filter_config(), policy_params()))
        throw ScenarioError("start state is outside the implicit safe set of policy " +
                            std::to_string(initial_policy.index));
}

State sample_start(const Scenario& sc, Rng& rng, double min_distance, double max_distance,
                   double heading_spread) {
    const auto obs = sc.inflated_obstacles();
    const Vec2 c = obs.empty() ? Vec2::Zero() : obs.front().center;
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const double bearing = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double d = rng.uniform(min_distance, max_distance);
        const Vec2 p = c + d * Vec2(std::cos(bearing), std::sin(bearing));
        const double heading = bearing + std::numbers::pi + rng.uniform(-heading_spread, heading_spread);
        const State s{p.x(), p.y(), heading};
        if (sc.arena.contains(p) &&
            in_implicit_safe_set(s, sc.initial_policy, obs, sc.filter_config(), sc.policy_params()))
            return s;
    }
    throw ScenarioError("could not sample a safe start state");
}

json to_json(const State& s) { return json::array({s.x, s.y, s.theta}); }

State state_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3)
        throw FormatError("state must be [x, y, theta]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json to_json(const Scenario& sc) {
    json obstacles = json::array();
    for (const auto& o : sc.obstacles)
        obstacles.push_back({{"center", {o.center.x(), o.center.y()}},
                             {"radius", o.radius},
                             {"velocity", {o.velocity.x(), o.velocity.y()}}});
    return {
        {"version", kScenarioVersion},
        {"name", sc.name},
        {"arena", {sc.arena.x_min, sc.arena.x_max, sc.arena.y_min, sc.arena.y_max}},
        {"obstacles", obstacles},
        {"robot_half_length", sc.robot_half_length},
        {"start", to_json(sc.start)},
        {"initial_policy", sc.initial_policy.index},
        {"bounds", {{"v_max", sc.bounds.v_max}, {"omega_max", sc.bounds.omega_max}}},
        {"epsilon", sc.epsilon},
        {"filter", {{"horizon", sc.horizon},
                    {"n_tau", sc.n_tau},
                    {"alpha_gain", sc.alpha_gain},
                    {"alpha_b_gain", sc.alpha_b_gain},
                    {"tighten_margin", sc.tighten_margin},
                    {"infeasible_fallback", "apply_backup"}}},
        {"governor", {{"dwell_ticks", sc.dwell_ticks}, {"try_runners_up", sc.try_runners_up}}},
        {"tick_dt", sc.tick_dt},
        {"goal_horizon", sc.goal_horizon},
    };
}

Scenario scenario_from_json(const json& j) {
    Scenario sc;
    try {
        const int version = j.at("version");
        if (version != kScenarioVersion)
            throw VersionMismatch("unsupported scenario version " + std::to_string(version));
        sc.name = j.value("name", sc.name);
        if (j.contains("arena")) {
            const auto a = j.at("arena").get<std::vector<double>>();
            if (a.size() != 4)
                throw FormatError("arena must be [x_min, x_max, y_min, y_max]");
            sc.arena = {a[0], a[1], a[2], a[3]};
        }
        if (j.contains("obstacles")) {
            sc.obstacles.clear();
            for (const auto& o : j.at("obstacles")) {
                Obstacle ob;
                const auto c = o.at("center").get<std::vector<double>>();
                if (c.size() != 2)
                    throw FormatError("obstacle center must be [x, y]");
                ob.center = {c[0], c[1]};
                ob.radius = o.at("radius");
                if (o.contains("velocity")) {
                    const auto v = o.at("velocity").get<std::vector<double>>();
                    if (v.size() != 2)
                        throw FormatError("obstacle velocity must be [vx, vy]");
                    ob.velocity = {v[0], v[1]};
                }
                sc.obstacles.push_back(ob);
            }
        }
        sc.robot_half_length = j.value("robot_half_length", sc.robot_half_length);
        if (j.contains("start"))
            sc.start = state_from_json(j.at("start"));
        sc.initial_policy = {j.value("initial_policy", sc.initial_policy.index)};
        if (j.contains("bounds")) {
            sc.bounds.v_max = j.at("bounds").value("v_max", sc.bounds.v_max);
            sc.bounds.omega_max = j.at("bounds").value("omega_max", sc.bounds.omega_max);
        }
        sc.epsilon = j.value("epsilon", sc.epsilon);
        if (j.contains("filter")) {
            const auto& f = j.at("filter");
            sc.horizon = f.value("horizon", sc.horizon);
            sc.n_tau = f.value("n_tau", sc.n_tau);
            sc.alpha_gain = f.value("alpha_gain", sc.alpha_gain);
            sc.alpha_b_gain = f.value("alpha_b_gain", sc.alpha_b_gain);
            sc.tighten_margin = f.value("tighten_margin", sc.tighten_margin);
            if (f.value("infeasible_fallback", std::string("apply_backup")) != "apply_backup")
                throw FormatError("infeasible_fallback must be apply_backup");
        }
        if (j.contains("governor")) {
            sc.dwell_ticks = j.at("governor").value("dwell_ticks", sc.dwell_ticks);
            sc.try_runners_up = j.at("governor").value("try_runners_up", sc.try_runners_up);
        }
        sc.tick_dt = j.value("tick_dt", sc.tick_dt);
        sc.goal_horizon = j.value("goal_horizon", sc.goal_horizon);
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad scenario: ") + e.what());
    }
    return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is)
        throw FormatError("cannot open scenario file: " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw FormatError("scenario " + path.string() + ": " + e.what());
    }
    Scenario sc = scenario_from_json(j);
    sc.validate();
    return sc;
}

void save_scenario(const Scenario& sc, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os)
        throw FormatError("cannot write scenario file: " + path.string());
    os << to_json(sc).dump(2) << '\n';
}

} // namespace mbcbf
