#include <doctest.h>

#include "mbcbf/episode.hpp"
#include "mbcbf/error.hpp"
#include "mbcbf/version.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

using namespace mbcbf;

namespace {

DriverSpec rammer() {
    DriverSpec d;
    d.kind = DriverKind::rammer;
    return d;
}

// Constant-reward model: a zeroed network whose output bias picks the policy.
RewardModel biased_model(int favorite) {
    ModelDims d;
    d.hidden = 4;
    d.dense = {4};
    RewardModel m(d, 0);
    m.parameters().setZero();
    m.block(m.block_index("out.b"))(favorite, 0) = 2.0;
    m.set_normalizer(Normalizer::identity());
    return m;
}

} // namespace

TEST_CASE("idle driver leaves the robot still") {
    Scenario sc;
    DriverSpec idle;
    const EpisodeLog log = run_episode(sc, idle, nullptr, 5.0, 1);
    CHECK(log.ticks.size() == 100);
    for (const TickRecord& r : log.ticks) {
        CHECK(r.state == sc.start);
        CHECK(r.h == log.ticks.front().h);
        CHECK(r.intervention == 0.0);
        CHECK(r.rewards.empty());
    }
    CHECK(summarize(log).interventions == 0);
}

TEST_CASE("rammer with the retreat policy stops short of the cone") {
    Scenario sc;
    sc.initial_policy = {1};
    const EpisodeLog log = run_episode(sc, rammer(), nullptr, 30.0, 2);
    const EpisodeSummary s = summarize(log);
    CHECK(s.min_h >= -1e-3);
    CHECK(s.within_bounds);
    CHECK(s.interventions > 0);
    CHECK(s.switches == 0);
}

TEST_CASE("tick records follow the loop order") {
    Scenario sc;
    EpisodeRunner runner(sc);
    const TickOutput a = runner.step({0.3, 0.1});
    CHECK(a.record.tick == 0);
    CHECK(a.record.state == sc.start);
    CHECK(a.record.u_d == Input{0.3, 0.1});
    CHECK(runner.state() == step_constant(sc.start, a.record.u_safe, sc.tick_dt));
    const TickOutput b = runner.step({0.3, 0.1});
    CHECK(b.record.t == doctest::Approx(0.05));
    const Vec3 xdot = vector_field(b.record.state, a.record.u_safe);
    CHECK(b.features[4] == xdot[0]);
    CHECK(b.features[7] == xdot[2]);
    CHECK(b.features[8] == 0.3);
}

TEST_CASE("learned switching logs validated events") {
    Scenario sc;
    const RewardModel m = biased_model(1);
    const EpisodeLog log = run_episode(sc, rammer(), &m, 5.0, 3);
    REQUIRE(log.switches.size() == 1);
    CHECK(log.switches[0].to == PolicyId{1});
    CHECK(log.switches[0].validated);
    // The history fills after 15 ticks, so the first reward arrives at tick 14.
    CHECK(log.ticks[13].rewards.empty());
    CHECK(log.ticks[14].rewards.size() == 3);
    CHECK(log.header.model_fingerprint == m.fingerprint());
    const auto k = static_cast<std::size_t>(log.switches[0].tick);
    CHECK(log.ticks[k + 1].feasible);
}

TEST_CASE("replay is bit exact") {
    Scenario sc;
    const RewardModel m = biased_model(2);
    const EpisodeLog log = run_episode(sc, rammer(), &m, 6.0, 4);
    const ReplayResult r = replay(log, &m);
    CHECK(r.bit_exact);
    CHECK_FALSE(r.counterfactual);
    const ReplayResult rewards_only = replay(log);
    CHECK(rewards_only.bit_exact);
}

TEST_CASE("perturbed command is reported at its tick") {
    Scenario sc;
    EpisodeLog log = run_episode(sc, rammer(), nullptr, 6.0, 5);
    log.ticks[40].u_d = Input{-0.5, 1.0};
    const ReplayResult r = replay(log);
    CHECK_FALSE(r.bit_exact);
    REQUIRE(r.first_divergence);
    CHECK(*r.first_divergence == 40);
}

TEST_CASE("replay under another model is counterfactual") {
    Scenario sc;
    const RewardModel a = biased_model(1);
    const RewardModel b = biased_model(2);
    const EpisodeLog log = run_episode(sc, rammer(), &a, 6.0, 6);
    const ReplayResult r = replay(log, &b);
    CHECK(r.counterfactual);
    CHECK(r.log.header.counterfactual);
    CHECK(r.log.ticks.size() == log.ticks.size());
    REQUIRE(!r.log.switches.empty());
    CHECK(r.log.switches[0].to == PolicyId{2});
    CHECK_FALSE(r.bit_exact);
}

TEST_CASE("episode log jsonl round trip and version check") {
    Scenario sc;
    const RewardModel m = biased_model(1);
    const EpisodeLog log = run_episode(sc, rammer(), &m, 3.0, 7);
    std::stringstream ss;
    write_episode_log(log, ss);
    const EpisodeLog back = read_episode_log(ss);
    REQUIRE(back.ticks.size() == log.ticks.size());
    CHECK(back.switches.size() == log.switches.size());
    for (std::size_t i = 0; i < log.ticks.size(); ++i) {
        CHECK(back.ticks[i].state == log.ticks[i].state);
        CHECK(back.ticks[i].u_safe == log.ticks[i].u_safe);
        CHECK(back.ticks[i].rewards == log.ticks[i].rewards);
    }
    CHECK(replay(back, &m).bit_exact);

    EpisodeLog old = log;
    old.header.library_version = "0.0.1";
    CHECK_THROWS_AS(replay(old), VersionMismatch);
    old = log;
    old.header.format_version = 99;
    CHECK_THROWS_AS(replay(old), VersionMismatch);
}

TEST_CASE("model with the wrong shape is refused") {
    ModelDims d;
    d.outputs = 2;
    RewardModel m(d, 0);
    CHECK_THROWS(EpisodeRunner(Scenario{}, &m));
}
