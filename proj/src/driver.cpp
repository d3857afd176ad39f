#include "mbcbf/driver.hpp"

#include "mbcbf/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mbcbf {

using nlohmann::json;

namespace {

double wrap_angle(double a) {
    return std::remainder(a, 2.0 * std::numbers::pi);
}

Input steer(const State& s, double desired_heading, double speed, bool reverse, const InputBounds& b) {
    const double heading = reverse ? s.theta + std::numbers::pi : s.theta;
    const double err = wrap_angle(desired_heading - heading);
    const double omega = b.omega_max * std::clamp(2.0 * err, -1.0, 1.0);
    const double v = speed * std::max(0.0, std::cos(err));
    return {reverse ? -v : v, omega};
}

class NoisyDriver : public Driver {
public:
    NoisyDriver(double noise, std::uint64_t seed) : noise_(noise), rng_(seed) {}

    Input command(const DriverContext& ctx) final {
        Input u = clean(ctx);
        if (noise_ > 0.0) {
            u.v += noise_ * ctx.bounds.v_max * rng_.normal();
            u.omega += noise_ * ctx.bounds.omega_max * rng_.normal();
        }
        return u;
    }

protected:
    virtual Input clean(const DriverContext& ctx) = 0;

private:
    double noise_;
    Rng rng_;
};

class IdleDriver final : public NoisyDriver {
public:
    using NoisyDriver::NoisyDriver;

protected:
    Input clean(const DriverContext&) override { return {}; }
};

class GoalSeeker final : public NoisyDriver {
public:
    GoalSeeker(const DriverSpec& spec, std::uint64_t seed)
        : NoisyDriver(spec.noise, seed), target_(spec.target), reverse_(spec.reverse),
          tol_(spec.arrive_tolerance) {}

protected:
    Input clean(const DriverContext& ctx) override {
        return seek_command(ctx.state, target_, reverse_, ctx.bounds, tol_);
    }

private:
    Vec2 target_;
    bool reverse_;
    double tol_;
};

class Orbiter final : public NoisyDriver {
public:
    Orbiter(const DriverSpec& spec, std::uint64_t seed)
        : NoisyDriver(spec.noise, seed), radius_(spec.radius), dir_(spec.direction >= 0 ? 1.0 : -1.0) {}

protected:
    Input clean(const DriverContext& ctx) override {
        const Vec2 center = ctx.obstacles.empty() ? Vec2::Zero() : ctx.obstacles.front().center;
        Vec2 rel = ctx.state.position() - center;
        double d = rel.norm();
        if (d < 1e-9) {
            rel = Vec2(1.0, 0.0);
            d = 1.0;
        }
        const Vec2 n = rel / d;
        const Vec2 tangent = dir_ * Vec2(-n.y(), n.x());
        const Vec2 desired = tangent - 1.5 * (d - radius_) * n;
        return steer(ctx.state, std::atan2(desired.y(), desired.x()), ctx.bounds.v_max, false, ctx.bounds);
    }

private:
    double radius_;
    double dir_;
};

class Rammer final : public NoisyDriver {
public:
    using NoisyDriver::NoisyDriver;

protected:
    Input clean(const DriverContext& ctx) override {
        const Vec2 center = ctx.obstacles.empty() ? Vec2::Zero() : ctx.obstacles.front().center;
        const Vec2 to = center - ctx.state.position();
        return steer(ctx.state, std::atan2(to.y(), to.x()), ctx.bounds.v_max, false, ctx.bounds);
    }
};

class WaypointFollower final : public NoisyDriver {
public:
    WaypointFollower(const DriverSpec& spec, std::uint64_t seed)
        : NoisyDriver(spec.noise, seed), points_(spec.waypoints), tol_(spec.arrive_tolerance) {}

    std::optional<int> intent() const override {
        if (points_.empty())
            return std::nullopt;
        return points_[std::min(index_, points_.size() - 1)].intent;
    }

protected:
    Input clean(const DriverContext& ctx) override {
        if (points_.empty())
            return {};
        constexpr double kPassTolerance = 0.15;
        while (index_ + 1 < points_.size() &&
               (ctx.state.position() - points_[index_].position).norm() < kPassTolerance)
            ++index_;
        const Waypoint& w = points_[index_];
        return seek_command(ctx.state, w.position, w.reverse, ctx.bounds, tol_);
    }

private:
    std::vector<Waypoint> points_;
    double tol_;
    std::size_t index_ = 0;
};

class ReplayDriver final : public Driver {
public:
    explicit ReplayDriver(std::vector<Input> commands) : commands_(std::move(commands)) {}

    Input command(const DriverContext& ctx) override {
        if (ctx.tick < 0 || static_cast<std::size_t>(ctx.tick) >= commands_.size())
            return {};
        return commands_[static_cast<std::size_t>(ctx.tick)];
    }

private:
    std::vector<Input> commands_;
};

} // namespace

Input seek_command(const State& s, const Vec2& target, bool reverse, const InputBounds& b,
                   double tolerance) {
    const Vec2 to = target - s.position();
    const double dist = to.norm();
    if (dist < tolerance)
        return {};
    const double speed = b.v_max * std::min(1.0, dist / 0.5);
    return steer(s, std::atan2(to.y(), to.x()), speed, reverse, b);
}

std::string to_string(DriverKind kind) {
    switch (kind) {
    case DriverKind::idle: return "idle";
    case DriverKind::goal_seeker: return "goal_seeker";
    case DriverKind::orbiter: return "orbiter";
    case DriverKind::rammer: return "rammer";
    case DriverKind::waypoint_sequence: return "waypoint_sequence";
    case DriverKind::replay: return "replay";
    }
    return "idle";
}

DriverKind driver_kind_from_string(const std::string& s) {
    for (auto k : {DriverKind::idle, DriverKind::goal_seeker, DriverKind::orbiter, DriverKind::rammer,
                   DriverKind::waypoint_sequence, DriverKind::replay}) {
        if (to_string(k) == s)
            return k;
    }
    throw FormatError("unknown driver kind '" + s + "'");
}

std::unique_ptr<Driver> make_driver(const DriverSpec& spec, std::uint64_t seed) {
    switch (spec.kind) {
    case DriverKind::idle: return std::make_unique<IdleDriver>(spec.noise, seed);
    case DriverKind::goal_seeker: return std::make_unique<GoalSeeker>(spec, seed);
    case DriverKind::orbiter: return std::make_unique<Orbiter>(spec, seed);
    case DriverKind::rammer: return std::make_unique<Rammer>(spec.noise, seed);
    case DriverKind::waypoint_sequence: return std::make_unique<WaypointFollower>(spec, seed);
    case DriverKind::replay: return std::make_unique<ReplayDriver>(spec.commands);
    }
    throw FormatError("unknown driver kind");
}

json to_json(const DriverSpec& spec) {
    json j = {{"kind", to_string(spec.kind)}, {"noise", spec.noise}};
    switch (spec.kind) {
    case DriverKind::goal_seeker:
        j["target"] = {spec.target.x(), spec.target.y()};
        j["reverse"] = spec.reverse;
        j["arrive_tolerance"] = spec.arrive_tolerance;
        break;
    case DriverKind::orbiter:
        j["radius"] = spec.radius;
        j["direction"] = spec.direction;
        break;
    case DriverKind::waypoint_sequence: {
        json pts = json::array();
        for (const auto& w : spec.waypoints) {
            json p = {{"position", {w.position.x(), w.position.y()}}, {"reverse", w.reverse}};
            if (w.intent)
                p["intent"] = *w.intent;
            pts.push_back(p);
        }
        j["waypoints"] = pts;
        j["arrive_tolerance"] = spec.arrive_tolerance;
        break;
    }
    case DriverKind::replay: {
        json cmds = json::array();
        for (const auto& u : spec.commands)
            cmds.push_back({u.v, u.omega});
        j["commands"] = cmds;
        break;
    }
    default:
        break;
    }
    return j;
}

DriverSpec driver_from_json(const json& j) {
    DriverSpec s;
    try {
        s.kind = driver_kind_from_string(j.at("kind"));
        s.noise = j.value("noise", 0.0);
        s.arrive_tolerance = j.value("arrive_tolerance", s.arrive_tolerance);
        if (j.contains("target")) {
            const auto t = j.at("target").get<std::vector<double>>();
            if (t.size() != 2)
                throw FormatError("target must be [x, y]");
            s.target = {t[0], t[1]};
        }
        s.reverse = j.value("reverse", false);
        s.radius = j.value("radius", s.radius);
        s.direction = j.value("direction", s.direction);
        if (j.contains("waypoints")) {
            for (const auto& p : j.at("waypoints")) {
                Waypoint w;
                const auto pos = p.at("position").get<std::vector<double>>();
                if (pos.size() != 2)
                    throw FormatError("waypoint position must be [x, y]");
                w.position = {pos[0], pos[1]};
                w.reverse = p.value("reverse", false);
                if (p.contains("intent"))
                    w.intent = p.at("intent").get<int>();
                s.waypoints.push_back(w);
            }
        }
        if (j.contains("commands")) {
            for (const auto& c : j.at("commands")) {
                const auto u = c.get<std::vector<double>>();
                if (u.size() != 2)
                    throw FormatError("command must be [v, omega]");
                s.commands.push_back({u[0], u[1]});
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad driver spec: ") + e.what());
    }
    return s;
}

} // namespace mbcbf
