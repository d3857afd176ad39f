#pragma once

#include "mbcbf/driver.hpp"
#include "mbcbf/features.hpp"
#include "mbcbf/reward_model.hpp"
#include "mbcbf/scenario.hpp"
#include "mbcbf/switch_governor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mbcbf {

inline constexpr int kEpisodeLogVersion = 1;

struct TickRecord {
    std::int64_t tick = 0;
    double t = 0.0;
    State state;   ///< pose at the start of the tick
    Input u_d;     ///< raw driver command
    Input u_safe;  ///< filtered command actually applied
    int active = 0;
    std::vector<double> rewards; ///< empty until a reward source is available
    double h = 0.0;
    double flow_min = 0.0;
    double terminal = 0.0;
    bool feasible = true;
    double intervention = 0.0;
};

struct EpisodeHeader {
    int format_version = kEpisodeLogVersion;
    std::string library_version;
    nlohmann::json scenario;
    nlohmann::json driver; ///< null for external drivers
    std::uint64_t seed = 0;
    double duration = 0.0;
    std::optional<std::string> model_fingerprint;
    bool counterfactual = false;
};

struct EpisodeLog {
    EpisodeHeader header;
    std::vector<TickRecord> ticks;
    std::vector<SwitchEvent> switches;
    std::int64_t rejected_switches = 0;
};

struct TickOutput {
    TickRecord record;
    std::optional<SwitchEvent> event;
    FeatureVector features{};
    double compute_seconds = 0.0; ///< features + forward + governor + filter
};

/// Stepwise episode loop: features, history, reward model, governor, filter, world step.
class EpisodeRunner {
public:
    EpisodeRunner(const Scenario& sc, const RewardModel* model = nullptr);

    /// Advances one tick. `rewards_override` replaces the model output (used for
    /// curriculum collection and for replaying recorded rewards).
    TickOutput step(const Input& u_d, const std::vector<double>* rewards_override = nullptr);

    const State& state() const { return state_; }
    std::int64_t tick() const { return tick_; }
    const SwitchState& switch_state() const { return switch_; }
    const Scenario& scenario() const { return sc_; }
    std::span<const Obstacle> obstacles() const { return obstacles_; }

private:
    Scenario sc_;
    const RewardModel* model_;
    std::vector<Obstacle> obstacles_;
    FilterConfig filter_cfg_;
    PolicyParams params_;
    GovernorConfig governor_cfg_;
    State state_;
    StateDerivative xdot_ = StateDerivative::Zero();
    SwitchState switch_;
    History history_;
    std::int64_t tick_ = 0;
};

struct EpisodeStats {
    std::vector<double> compute_seconds;
    double median_compute() const;
};

EpisodeLog run_episode(const Scenario& sc, const DriverSpec& driver, const RewardModel* model,
                       double duration, std::uint64_t seed, EpisodeStats* stats = nullptr);

struct ReplayResult {
    EpisodeLog log;
    bool bit_exact = false;
    std::optional<std::int64_t> first_divergence;
    bool counterfactual = false;
};

/// Re-runs the recorded command stream. Without a model the recorded rewards
/// drive the governor; with a model of a different fingerprint the run is
/// flagged counterfactual. Throws VersionMismatch on format or library mismatch.
ReplayResult replay(const EpisodeLog& log, const RewardModel* model = nullptr);

struct EpisodeSummary {
    std::size_t ticks = 0;
    double min_h = 0.0;
    double max_abs_v = 0.0;
    double max_abs_omega = 0.0;
    std::size_t interventions = 0;
    std::size_t infeasible_ticks = 0;
    std::size_t switches = 0;
    std::int64_t rejected_switches = 0;
    bool within_bounds = true;
    State final_state;
};

EpisodeSummary summarize(const EpisodeLog& log);

nlohmann::json to_json(const TickRecord& r);
nlohmann::json to_json(const SwitchEvent& e);
nlohmann::json to_json(const EpisodeHeader& h);

void write_episode_log(const EpisodeLog& log, std::ostream& os);
EpisodeLog read_episode_log(std::istream& is);
void save_episode_log(const EpisodeLog& log, const std::filesystem::path& path);
EpisodeLog load_episode_log(const std::filesystem::path& path);

} // namespace mbcbf
