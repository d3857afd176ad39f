#pragma once

#include "mbcbf/dataset.hpp"
#include "mbcbf/driver.hpp"
#include "mbcbf/scenario.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

namespace mbcbf {

enum class ScheduleKind { constant, phases, per_tick, follow_driver };

/// Which backup policy is correct at each tick of an episode.
struct LabelSchedule {
    ScheduleKind kind = ScheduleKind::constant;
    int policy = 0;                               ///< constant
    std::vector<std::pair<std::int64_t, int>> phases; ///< (first tick, policy), first at tick 0
    std::vector<int> per_tick;

    static LabelSchedule constant_policy(int p);
    static LabelSchedule phased(std::vector<std::pair<std::int64_t, int>> phases);
    static LabelSchedule follow();

    /// Throws ScenarioError when the schedule cannot label `ticks` ticks.
    void validate(std::int64_t ticks) const;
    int label_at(std::int64_t tick, std::optional<int> driver_intent) const;
};

struct CurriculumEntry {
    DriverSpec driver;
    LabelSchedule schedule;
    double duration = 20.0;
    std::optional<State> start;
};

/// Runs `episodes` episodes cycling through the curriculum. The governor is fed
/// the one-hot label as its reward so the active policy tracks the intent.
/// Validation episodes are split by episode id.
Dataset collect_dataset(const Scenario& sc, const std::vector<CurriculumEntry>& curriculum,
                        int episodes, std::uint64_t seed, double validation_fraction = 0.2);

/// Randomised approaches around the first obstacle: forward passes (0), stops in
/// front of the obstacle (1), reverse passes (2) and approach-then-back-out
/// episodes (1 then 2). Each episode lasts long enough to finish its maneuver.
std::vector<CurriculumEntry> synthetic_curriculum(const Scenario& sc, int episodes,
                                                  std::uint64_t seed);

/// Total ticks of one pass over the curriculum.
std::int64_t curriculum_ticks(const std::vector<CurriculumEntry>& c, double tick_dt);

nlohmann::json to_json(const LabelSchedule& s);
LabelSchedule schedule_from_json(const nlohmann::json& j);
nlohmann::json to_json(const std::vector<CurriculumEntry>& c);
std::vector<CurriculumEntry> curriculum_from_json(const nlohmann::json& j);
std::vector<CurriculumEntry> load_curriculum(const std::filesystem::path& path);

} // namespace mbcbf
