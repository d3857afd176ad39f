#include "mbcbf/collect.hpp"

#include "mbcbf/episode.hpp"
#include "mbcbf/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <span>

namespace mbcbf {

using nlohmann::json;

LabelSchedule LabelSchedule::constant_policy(int p) {
    LabelSchedule s;
    s.kind = ScheduleKind::constant;
    s.policy = p;
    return s;
}

LabelSchedule LabelSchedule::phased(std::vector<std::pair<std::int64_t, int>> phases) {
    LabelSchedule s;
    s.kind = ScheduleKind::phases;
    s.phases = std::move(phases);
    return s;
}

LabelSchedule LabelSchedule::follow() {
    LabelSchedule s;
    s.kind = ScheduleKind::follow_driver;
    return s;
}

namespace {

void check_label(int p) {
    if (p < 0 || p >= kPolicyCount)
        throw ScenarioError("label " + std::to_string(p) + " is not a backup policy");
}

} // namespace

void LabelSchedule::validate(std::int64_t ticks) const {
    switch (kind) {
    case ScheduleKind::constant:
        check_label(policy);
        break;
    case ScheduleKind::phases:
        if (phases.empty() || phases.front().first != 0)
            throw ScenarioError("phase schedule must start at tick 0");
        for (std::size_t i = 0; i < phases.size(); ++i) {
            check_label(phases[i].second);
            if (i > 0 && phases[i].first <= phases[i - 1].first)
                throw ScenarioError("phase ticks must increase");
        }
        break;
    case ScheduleKind::per_tick:
        if (static_cast<std::int64_t>(per_tick.size()) != ticks)
            throw ScenarioError("schedule has " + std::to_string(per_tick.size()) +
                                " labels for an episode of " + std::to_string(ticks) + " ticks");
        for (int p : per_tick)
            check_label(p);
        break;
    case ScheduleKind::follow_driver:
        break;
    }
}

int LabelSchedule::label_at(std::int64_t tick, std::optional<int> driver_intent) const {
    switch (kind) {
    case ScheduleKind::constant:
        return policy;
    case ScheduleKind::phases: {
        int p = phases.front().second;
        for (const auto& [start, label] : phases) {
            if (tick >= start)
                p = label;
        }
        return p;
    }
    case ScheduleKind::per_tick:
        return per_tick.at(static_cast<std::size_t>(tick));
    case ScheduleKind::follow_driver:
        if (!driver_intent)
            throw ScenarioError("driver carries no intent to follow");
        check_label(*driver_intent);
        return *driver_intent;
    }
    return 0;
}

Dataset collect_dataset(const Scenario& sc, const std::vector<CurriculumEntry>& curriculum,
                        int episodes, std::uint64_t seed, double validation_fraction) {
    if (curriculum.empty())
        throw ScenarioError("empty curriculum");
    if (episodes < 0)
        throw ScenarioError("episode count must be non-negative");
    sc.validate_parameters();

    Dataset d;
    d.m_k = kPolicyCount;
    for (int e = 0; e < episodes; ++e) {
        const CurriculumEntry& entry = curriculum[static_cast<std::size_t>(e) % curriculum.size()];
        const auto ticks = static_cast<std::int64_t>(std::llround(entry.duration / sc.tick_dt));
        entry.schedule.validate(ticks);

        auto driver = make_driver(entry.driver, derive_seed(seed, static_cast<std::uint64_t>(e)));
        Scenario esc = sc;
        if (entry.start)
            esc.start = *entry.start;
        esc.initial_policy = {entry.schedule.label_at(0, driver->intent())};
        EpisodeRunner runner(esc, nullptr);

        std::vector<double> onehot(kPolicyCount);
        for (std::int64_t k = 0; k < ticks; ++k) {
            const Input u_d = driver->command({k, runner.state(), runner.obstacles(), esc.bounds});
            const int label = entry.schedule.label_at(k, driver->intent());
            std::fill(onehot.begin(), onehot.end(), 0.0);
            onehot[static_cast<std::size_t>(label)] = 1.0;
            const TickOutput o = runner.step(u_d, &onehot);
            d.rows.push_back({e, static_cast<int>(k), o.features, label, o.record.active});
        }
    }
    assign_validation_split(d, validation_fraction, derive_seed(seed, 0x5e1ec7));
    return d;
}

namespace {

// Time to drive the polyline at full speed plus the slow final approach.
double maneuver_duration(const Vec2& start, std::span<const Vec2> points, const InputBounds& b,
                         double tick_dt) {
    double length = 0.0;
    Vec2 prev = start;
    for (const Vec2& p : points) {
        length += (p - prev).norm();
        prev = p;
    }
    const double t = 1.2 * length / b.v_max + 3.0;
    return std::ceil(t / tick_dt) * tick_dt;
}

} // namespace

std::int64_t curriculum_ticks(const std::vector<CurriculumEntry>& c, double tick_dt) {
    std::int64_t n = 0;
    for (const auto& e : c)
        n += static_cast<std::int64_t>(std::llround(e.duration / tick_dt));
    return n;
}

std::vector<CurriculumEntry> synthetic_curriculum(const Scenario& sc, int episodes,
                                                  std::uint64_t seed) {
    if (sc.obstacles.empty())
        throw ScenarioError("synthetic curriculum needs an obstacle");
    const std::vector<Obstacle> obs = sc.inflated_obstacles();
    const Vec2 c = obs.front().center;
    const double r = obs.front().radius;
    constexpr double kPi = std::numbers::pi;

    Rng rng(seed);
    std::vector<CurriculumEntry> out;
    out.reserve(static_cast<std::size_t>(std::max(episodes, 0)));
    for (int e = 0; e < episodes; ++e) {
        const int kind = e % 4;
        const double bearing = rng.uniform(0.0, 2.0 * kPi);
        const double d0 = rng.uniform(2.6, 3.4);
        const Vec2 radial(std::cos(bearing), std::sin(bearing));
        const Vec2 start = c + d0 * radial;
        const Vec2 ahead = -radial; // start toward the obstacle
        const Vec2 side = (rng.uniform() < 0.5 ? 1.0 : -1.0) * Vec2(-ahead.y(), ahead.x());
        const double jitter = rng.uniform(-20.0, 20.0) * kPi / 180.0;

        CurriculumEntry entry;
        entry.driver.noise = 0.02;
        double heading = std::atan2(ahead.y(), ahead.x()) + jitter;

        switch (kind) {
        case 0: { // forward pass with a lateral offset
            const double lateral = rng.uniform(1.0, 1.8);
            entry.driver.kind = DriverKind::goal_seeker;
            entry.driver.target = c + rng.uniform(1.5, 2.2) * ahead + lateral * side;
            entry.schedule = LabelSchedule::constant_policy(0);
            break;
        }
        case 1: { // approach and stop in front of the obstacle
            const double margin = rng.uniform(0.1, 0.25);
            const double offset = rng.uniform(-0.2, 0.2);
            Vec2 target = c - (r + margin) * ahead + offset * side;
            target = c + (r + margin) * (target - c).normalized();
            entry.driver.kind = DriverKind::goal_seeker;
            entry.driver.target = target;
            entry.schedule = LabelSchedule::constant_policy(1);
            break;
        }
        case 2: { // reverse pass: facing away, backing past the obstacle
            const double lateral = rng.uniform(1.0, 1.8);
            heading += kPi;
            entry.driver.kind = DriverKind::goal_seeker;
            entry.driver.reverse = true;
            entry.driver.target = c + rng.uniform(1.5, 2.2) * ahead + lateral * side;
            entry.schedule = LabelSchedule::constant_policy(2);
            break;
        }
        default: { // approach, then back out along the way in
            const double margin = rng.uniform(0.1, 0.25);
            Waypoint near{c - (r + margin) * ahead, false, 1};
            Waypoint back{c - rng.uniform(1.6, 2.4) * ahead + rng.uniform(-0.5, 0.5) * side, true, 2};
            entry.driver.kind = DriverKind::waypoint_sequence;
            entry.driver.waypoints = {near, back};
            entry.schedule = LabelSchedule::follow();
            break;
        }
        }
        entry.start = State{start.x(), start.y(), heading};
        std::vector<Vec2> path;
        if (entry.driver.kind == DriverKind::waypoint_sequence) {
            for (const Waypoint& w : entry.driver.waypoints)
                path.push_back(w.position);
        } else {
            path.push_back(entry.driver.target);
        }
        entry.duration = maneuver_duration(start, path, sc.bounds, sc.tick_dt);
        out.push_back(std::move(entry));
    }
    return out;
}

namespace {

std::string to_string(ScheduleKind k) {
    switch (k) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::phases: return "phases";
    case ScheduleKind::per_tick: return "per_tick";
    case ScheduleKind::follow_driver: return "follow_driver";
    }
    return "constant";
}

} // namespace

json to_json(const LabelSchedule& s) {
    json j = {{"kind", to_string(s.kind)}};
    switch (s.kind) {
    case ScheduleKind::constant: j["policy"] = s.policy; break;
    case ScheduleKind::phases: {
        json ph = json::array();
        for (const auto& [t, p] : s.phases)
            ph.push_back({{"tick", t}, {"policy", p}});
        j["phases"] = ph;
        break;
    }
    case ScheduleKind::per_tick: j["labels"] = s.per_tick; break;
    case ScheduleKind::follow_driver: break;
    }
    return j;
}

LabelSchedule schedule_from_json(const json& j) {
    LabelSchedule s;
    const std::string kind = j.at("kind");
    if (kind == "constant") {
        s = LabelSchedule::constant_policy(j.at("policy"));
    } else if (kind == "phases") {
        std::vector<std::pair<std::int64_t, int>> ph;
        for (const auto& p : j.at("phases"))
            ph.emplace_back(p.at("tick").get<std::int64_t>(), p.at("policy").get<int>());
        s = LabelSchedule::phased(std::move(ph));
    } else if (kind == "per_tick") {
        s.kind = ScheduleKind::per_tick;
        s.per_tick = j.at("labels").get<std::vector<int>>();
    } else if (kind == "follow_driver") {
        s = LabelSchedule::follow();
    } else {
        throw FormatError("unknown schedule kind '" + kind + "'");
    }
    return s;
}

json to_json(const std::vector<CurriculumEntry>& c) {
    json entries = json::array();
    for (const auto& e : c) {
        json j = {{"driver", to_json(e.driver)},
                  {"schedule", to_json(e.schedule)},
                  {"duration", e.duration}};
        if (e.start)
            j["start"] = to_json(*e.start);
        entries.push_back(j);
    }
    return {{"version", 1}, {"entries", entries}};
}

std::vector<CurriculumEntry> curriculum_from_json(const json& j) {
    std::vector<CurriculumEntry> out;
    try {
        if (j.at("version").get<int>() != 1)
            throw VersionMismatch("curriculum version " + j.at("version").dump());
        for (const auto& e : j.at("entries")) {
            CurriculumEntry c;
            c.driver = driver_from_json(e.at("driver"));
            c.schedule = schedule_from_json(e.at("schedule"));
            c.duration = e.value("duration", c.duration);
            if (e.contains("start"))
                c.start = state_from_json(e.at("start"));
            out.push_back(std::move(c));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad curriculum: ") + e.what());
    }
    return out;
}

std::vector<CurriculumEntry> load_curriculum(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is)
        throw FormatError("cannot read " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return curriculum_from_json(j);
}

} // namespace mbcbf
