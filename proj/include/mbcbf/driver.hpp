#pragma once

#include "mbcbf/backup_policies.hpp"
#include "mbcbf/random.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mbcbf {

enum class DriverKind { idle, goal_seeker, orbiter, rammer, waypoint_sequence, replay };

std::string to_string(DriverKind kind);
DriverKind driver_kind_from_string(const std::string& s);

struct Waypoint {
    Vec2 position = Vec2::Zero();
    bool reverse = false;
    /// Intended backup policy while heading to this waypoint, if any.
    std::optional<int> intent;
};

/// Scripted stand-in for the human driver.
struct DriverSpec {
    DriverKind kind = DriverKind::idle;
    Vec2 target = Vec2::Zero();   ///< goal_seeker
    bool reverse = false;         ///< goal_seeker drives backwards
    double radius = 1.0;          ///< orbiter radius about the first obstacle center
    int direction = 1;            ///< orbiter: +1 counter-clockwise, -1 clockwise
    std::vector<Waypoint> waypoints;
    std::vector<Input> commands;  ///< replay
    double noise = 0.0;           ///< std-dev as a fraction of each input bound
    double arrive_tolerance = 0.05;
};

struct DriverContext {
    std::int64_t tick = 0;
    State state;
    std::span<const Obstacle> obstacles;
    InputBounds bounds;
};

class Driver {
public:
    virtual ~Driver() = default;
    virtual Input command(const DriverContext& ctx) = 0;
    /// Current intended policy when the driver carries one (waypoint intents).
    virtual std::optional<int> intent() const { return std::nullopt; }
};

std::unique_ptr<Driver> make_driver(const DriverSpec& spec, std::uint64_t seed);

/// Steering toward a point, forwards or backwards, slowing inside 0.5 m.
Input seek_command(const State& s, const Vec2& target, bool reverse, const InputBounds& b,
                   double tolerance);

nlohmann::json to_json(const DriverSpec& spec);
DriverSpec driver_from_json(const nlohmann::json& j);

} // namespace mbcbf
