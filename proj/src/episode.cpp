#include "mbcbf/episode.hpp"

#include "mbcbf/error.hpp"
#include "mbcbf/version.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

namespace mbcbf {

using nlohmann::json;

EpisodeRunner::EpisodeRunner(const Scenario& sc, const RewardModel* model)
    : sc_(sc), model_(model), obstacles_(sc.inflated_obstacles()), filter_cfg_(sc.filter_config()),
      params_(sc.policy_params()), governor_cfg_(sc.governor_config()), state_(sc.start) {
    sc_.validate_parameters();
    if (model_) {
        if (model_->dims().input != kFeatureCount)
            throw ModelError("model expects " + std::to_string(model_->dims().input) +
                             " features, simulator produces " + std::to_string(kFeatureCount));
        if (model_->dims().outputs != kPolicyCount)
            throw ModelError("model has " + std::to_string(model_->dims().outputs) +
                             " outputs, scenario has " + std::to_string(kPolicyCount) + " policies");
    }
    switch_.active = sc.initial_policy;
}

TickOutput EpisodeRunner::step(const Input& u_d, const std::vector<double>* rewards_override) {
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();

    TickOutput out;
    TickRecord& rec = out.record;
    rec.tick = tick_;
    rec.t = static_cast<double>(tick_) * sc_.tick_dt;
    rec.state = state_;
    rec.u_d = u_d;

    const Input u_cmd = sc_.bounds.clamp(u_d);
    out.features = extract_features(state_, xdot_, u_cmd, obstacles_, sc_.goal_horizon);
    history_.push(out.features);

    if (rewards_override) {
        if (static_cast<int>(rewards_override->size()) != kPolicyCount)
            throw ModelError("reward vector has wrong length");
        rec.rewards = *rewards_override;
    } else if (model_ && history_.full()) {
        rec.rewards = model_->forward(history_.window());
    }

    switch_.tick = tick_;
    if (!rec.rewards.empty()) {
        GovernorStep g = governor_step(switch_, rec.rewards, state_, u_d, obstacles_, filter_cfg_,
                                       params_, governor_cfg_);
        switch_ = g.state;
        out.event = std::move(g.event);
    }

    const FilterOutput f = filter(state_, u_d, switch_.active, obstacles_, filter_cfg_, params_);
    out.compute_seconds = std::chrono::duration<double>(Clock::now() - t0).count();

    rec.u_safe = f.u_safe;
    rec.active = switch_.active.index;
    rec.h = f.h_now;
    rec.flow_min = f.min_flow_margin;
    rec.terminal = f.terminal_margin;
    rec.feasible = f.feasible;
    rec.intervention = f.intervention;

    state_ = step_constant(state_, f.u_safe, sc_.tick_dt);
    xdot_ = vector_field(state_, f.u_safe);
    ++tick_;
    return out;
}

double EpisodeStats::median_compute() const {
    if (compute_seconds.empty())
        return 0.0;
    std::vector<double> v = compute_seconds;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

namespace {

std::int64_t tick_count(double duration, double dt) {
    return static_cast<std::int64_t>(std::llround(duration / dt));
}

EpisodeHeader make_header(const Scenario& sc, const json& driver, const RewardModel* model,
                          double duration, std::uint64_t seed) {
    EpisodeHeader h;
    h.library_version = kLibraryVersion;
    h.scenario = to_json(sc);
    h.driver = driver;
    h.seed = seed;
    h.duration = duration;
    if (model)
        h.model_fingerprint = model->fingerprint();
    return h;
}

bool same_bits(double a, double b) {
    return std::memcmp(&a, &b, sizeof(double)) == 0;
}

bool same_record(const TickRecord& a, const TickRecord& b) {
    return same_bits(a.state.x, b.state.x) && same_bits(a.state.y, b.state.y) &&
           same_bits(a.state.theta, b.state.theta) && same_bits(a.u_safe.v, b.u_safe.v) &&
           same_bits(a.u_safe.omega, b.u_safe.omega) && a.active == b.active;
}

} // namespace

EpisodeLog run_episode(const Scenario& sc, const DriverSpec& driver, const RewardModel* model,
                       double duration, std::uint64_t seed, EpisodeStats* stats) {
    if (!(duration >= 0.0))
        throw ScenarioError("duration must be non-negative");
    sc.validate();
    EpisodeRunner runner(sc, model);
    auto drv = make_driver(driver, derive_seed(seed, 1));

    EpisodeLog log;
    log.header = make_header(sc, to_json(driver), model, duration, seed);
    const std::int64_t n = tick_count(duration, sc.tick_dt);
    log.ticks.reserve(static_cast<std::size_t>(n));
    for (std::int64_t k = 0; k < n; ++k) {
        const Input u_d = drv->command({k, runner.state(), runner.obstacles(), sc.bounds});
        TickOutput o = runner.step(u_d);
        if (stats)
            stats->compute_seconds.push_back(o.compute_seconds);
        if (o.event)
            log.switches.push_back(std::move(*o.event));
        log.ticks.push_back(std::move(o.record));
    }
    log.rejected_switches = runner.switch_state().rejected_switches;
    return log;
}

ReplayResult replay(const EpisodeLog& log, const RewardModel* model) {
    if (log.header.format_version != kEpisodeLogVersion)
        throw VersionMismatch("episode log format version " +
                              std::to_string(log.header.format_version) + ", expected " +
                              std::to_string(kEpisodeLogVersion));
    if (log.header.library_version != kLibraryVersion)
        throw VersionMismatch("episode log written by version " + log.header.library_version +
                              ", this is " + kLibraryVersion);

    const Scenario sc = scenario_from_json(log.header.scenario);
    ReplayResult res;
    if (model) {
        res.counterfactual =
            !log.header.model_fingerprint || *log.header.model_fingerprint != model->fingerprint();
    }

    EpisodeRunner runner(sc, model);
    res.log.header = log.header;
    res.log.header.counterfactual = res.counterfactual;
    if (model)
        res.log.header.model_fingerprint = model->fingerprint();

    for (const TickRecord& rec : log.ticks) {
        const std::vector<double>* override_rewards =
            (!model && !rec.rewards.empty()) ? &rec.rewards : nullptr;
        TickOutput o = runner.step(rec.u_d, override_rewards);
        if (o.event)
            res.log.switches.push_back(std::move(*o.event));
        if (!res.first_divergence && !same_record(o.record, rec))
            res.first_divergence = rec.tick;
        res.log.ticks.push_back(std::move(o.record));
    }
    res.log.rejected_switches = runner.switch_state().rejected_switches;
    res.bit_exact = !res.first_divergence;
    return res;
}

EpisodeSummary summarize(const EpisodeLog& log) {
    const Scenario sc = log.header.scenario.is_null() ? Scenario{}
                                                      : scenario_from_json(log.header.scenario);
    EpisodeSummary s;
    s.ticks = log.ticks.size();
    s.min_h = std::numeric_limits<double>::infinity();
    for (const TickRecord& r : log.ticks) {
        s.min_h = std::min(s.min_h, r.h);
        s.max_abs_v = std::max(s.max_abs_v, std::abs(r.u_safe.v));
        s.max_abs_omega = std::max(s.max_abs_omega, std::abs(r.u_safe.omega));
        if (r.intervention > 1e-9)
            ++s.interventions;
        if (!r.feasible)
            ++s.infeasible_ticks;
    }
    s.final_state = sc.start;
    if (!log.ticks.empty())
        s.final_state = step_constant(log.ticks.back().state, log.ticks.back().u_safe, sc.tick_dt);
    s.within_bounds = s.max_abs_v <= sc.bounds.v_max && s.max_abs_omega <= sc.bounds.omega_max;
    s.switches = log.switches.size();
    s.rejected_switches = log.rejected_switches;
    return s;
}

json to_json(const TickRecord& r) {
    json j;
    j["type"] = "tick";
    j["tick"] = r.tick;
    j["t"] = r.t;
    j["state"] = {r.state.x, r.state.y, r.state.theta};
    j["u_d"] = {r.u_d.v, r.u_d.omega};
    j["u_safe"] = {r.u_safe.v, r.u_safe.omega};
    j["active"] = r.active;
    j["rewards"] = r.rewards;
    j["h"] = r.h;
    j["flow_min"] = r.flow_min;
    j["terminal"] = r.terminal;
    j["feasible"] = r.feasible;
    j["intervention"] = r.intervention;
    return j;
}

json to_json(const SwitchEvent& e) {
    return {{"type", "switch"},        {"tick", e.tick},       {"from", e.from.index},
            {"to", e.to.index},        {"rewards", e.rewards}, {"validated", e.validated}};
}

json to_json(const EpisodeHeader& h) {
    json j;
    j["type"] = "header";
    j["format_version"] = h.format_version;
    j["library_version"] = h.library_version;
    j["scenario"] = h.scenario;
    j["driver"] = h.driver;
    j["seed"] = h.seed;
    j["duration"] = h.duration;
    j["model_fingerprint"] = h.model_fingerprint ? json(*h.model_fingerprint) : json(nullptr);
    j["counterfactual"] = h.counterfactual;
    return j;
}

namespace {

Input input_from(const json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 2)
        throw FormatError("input must be [v, omega]");
    return {v[0], v[1]};
}

} // namespace

void write_episode_log(const EpisodeLog& log, std::ostream& os) {
    os << to_json(log.header).dump() << '\n';
    // Switch events are interleaved after the tick they occurred on.
    std::size_t next_switch = 0;
    for (const TickRecord& r : log.ticks) {
        os << to_json(r).dump() << '\n';
        while (next_switch < log.switches.size() && log.switches[next_switch].tick == r.tick)
            os << to_json(log.switches[next_switch++]).dump() << '\n';
    }
    for (; next_switch < log.switches.size(); ++next_switch)
        os << to_json(log.switches[next_switch]).dump() << '\n';
    os << json{{"type", "footer"}, {"ticks", log.ticks.size()},
               {"rejected_switches", log.rejected_switches}}
              .dump()
       << '\n';
}

EpisodeLog read_episode_log(std::istream& is) {
    EpisodeLog log;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty())
            continue;
        try {
            const json j = json::parse(line);
            const std::string type = j.at("type");
            if (type == "header") {
                EpisodeHeader& h = log.header;
                h.format_version = j.at("format_version");
                if (h.format_version != kEpisodeLogVersion)
                    throw VersionMismatch("episode log format version " +
                                          std::to_string(h.format_version));
                h.library_version = j.at("library_version");
                h.scenario = j.at("scenario");
                h.driver = j.value("driver", json(nullptr));
                h.seed = j.at("seed");
                h.duration = j.at("duration");
                if (!j.at("model_fingerprint").is_null())
                    h.model_fingerprint = j.at("model_fingerprint").get<std::string>();
                h.counterfactual = j.value("counterfactual", false);
                have_header = true;
            } else if (!have_header) {
                throw FormatError("episode log must start with a header line");
            } else if (type == "tick") {
                TickRecord r;
                r.tick = j.at("tick");
                r.t = j.at("t");
                r.state = state_from_json(j.at("state"));
                r.u_d = input_from(j.at("u_d"));
                r.u_safe = input_from(j.at("u_safe"));
                r.active = j.at("active");
                r.rewards = j.at("rewards").get<std::vector<double>>();
                r.h = j.at("h");
                r.flow_min = j.at("flow_min");
                r.terminal = j.at("terminal");
                r.feasible = j.at("feasible");
                r.intervention = j.at("intervention");
                log.ticks.push_back(std::move(r));
            } else if (type == "switch") {
                SwitchEvent e;
                e.tick = j.at("tick");
                e.from = {j.at("from").get<int>()};
                e.to = {j.at("to").get<int>()};
                e.rewards = j.at("rewards").get<std::vector<double>>();
                e.validated = j.at("validated");
                log.switches.push_back(std::move(e));
            } else if (type == "footer") {
                log.rejected_switches = j.at("rejected_switches");
            } else {
                throw FormatError("unknown record type '" + type + "'");
            }
        } catch (const json::exception& e) {
            throw FormatError("episode log line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!have_header)
        throw FormatError("episode log has no header");
    return log;
}

void save_episode_log(const EpisodeLog& log, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os)
        throw FormatError("cannot write " + path.string());
    write_episode_log(log, os);
}

EpisodeLog load_episode_log(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is)
        throw FormatError("cannot read " + path.string());
    return read_episode_log(is);
}

} // namespace mbcbf
