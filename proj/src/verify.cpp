#include "mbcbf/verify.hpp"

#include "mbcbf/dataset.hpp"
#include "mbcbf/episode.hpp"
#include "mbcbf/error.hpp"
#include "mbcbf/flow.hpp"
#include "mbcbf/qp.hpp"
#include "mbcbf/reward_model.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace mbcbf {

using nlohmann::json;

json to_json(const SuiteResult& r) {
    return {{"name", r.name},   {"passed", r.passed},       {"cases", r.cases},
            {"failures", r.failures}, {"worst", r.worst}, {"tolerance", r.tolerance},
            {"seconds", r.seconds},   {"detail", r.detail}};
}

namespace {

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

State random_state(Rng& rng, double extent) {
    return {rng.uniform(-extent, extent), rng.uniform(-extent, extent),
            rng.uniform(-std::numbers::pi, std::numbers::pi)};
}

} // namespace

SuiteResult verify_backup_invariance(int states_per_policy, std::uint64_t seed, double duration) {
    Timer timer;
    SuiteResult r{"backup_invariance"};
    r.tolerance = 1e-6;
    const Obstacle o{Vec2::Zero(), 0.5, Vec2::Zero()};
    const PolicyParams params;
    Rng rng(seed);
    constexpr double dt = 0.01;
    const int steps = static_cast<int>(std::lround(duration / dt));
    double worst = std::numeric_limits<double>::infinity();
    for (int p = 0; p < kPolicyCount; ++p) {
        const PolicyId id{p};
        const ControlLaw law = policy_law(id, o, params);
        for (int n = 0; n < states_per_policy;) {
            const State s0 = random_state(rng, 4.0);
            if (h_distance(s0, o) < 0.0 || policy_barrier(id, s0, o, params) < 0.05)
                continue;
            ++n;
            ++r.cases;
            State s = s0;
            bool ok = true;
            for (int k = 0; k < steps && ok; ++k) {
                s = step_closed_loop(s, law, dt);
                const double hb = policy_barrier(id, s, o, params);
                const double h = h_distance(s, o);
                worst = std::min({worst, hb, h});
                ok = hb >= -1e-6 && h >= 0.0;
            }
            if (!ok)
                ++r.failures;
        }
    }
    r.worst = worst;
    r.passed = r.failures == 0;
    r.detail = "min over runs of min(h_b, h)";
    r.seconds = timer.seconds();
    return r;
}

SuiteResult verify_sensitivities(int cases, std::uint64_t seed) {
    Timer timer;
    SuiteResult r{"sensitivities"};
    r.tolerance = 1e-4;
    const Obstacle o{Vec2::Zero(), 0.5, Vec2::Zero()};
    const PolicyParams params;
    Rng rng(seed);
    while (static_cast<int>(r.cases) < cases) {
        const State x = random_state(rng, 3.5);
        if (h_distance(x, o) < 0.1)
            continue;
        const PolicyId id{static_cast<int>(rng.index(kPolicyCount))};
        const int n_tau = 20;
        const FlowResult flow = integrate_backup_flow(x, id, o, params, 2.0, n_tau);
        const std::size_t i = 1 + rng.index(n_tau);
        const FlowSample& sample = flow.samples[i];
        const Mat3 fd = sensitivity_fd_oracle(x, id, o, params, sample.tau);
        const double err = (sample.sensitivity - fd).norm() / std::max(fd.norm(), 1e-12);
        ++r.cases;
        r.worst = std::max(r.worst, err);
        if (!(err <= r.tolerance))
            ++r.failures;
    }
    r.passed = r.failures == 0;
    r.detail = "relative Frobenius error";
    r.seconds = timer.seconds();
    return r;
}

SuiteResult verify_qp(int cases, std::uint64_t seed) {
    Timer timer;
    SuiteResult r{"qp_oracle"};
    r.tolerance = 1e-8;
    Rng rng(seed);
    for (int c = 0; c < cases; ++c) {
        QProblem p;
        p.box = {rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0)};
        p.target = {rng.uniform(-2.0, 2.0) * p.box.v_max, rng.uniform(-2.0, 2.0) * p.box.omega_max};
        const int m = static_cast<int>(rng.index(5));
        for (int k = 0; k < m; ++k) {
            const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
            p.ineqs.push_back({Vec2(std::cos(ang), std::sin(ang)) * rng.uniform(0.1, 3.0),
                               rng.uniform(-1.5, 1.0)});
        }
        const QSolution a = solve(p);
        const QSolution b = kkt_enumeration_oracle(p);
        ++r.cases;
        double gap = 0.0;
        if (a.feasible != b.feasible) {
            gap = std::numeric_limits<double>::infinity();
        } else if (a.feasible) {
            gap = std::abs(a.objective - b.objective);
        }
        r.worst = std::max(r.worst, gap);
        if (!(gap <= r.tolerance))
            ++r.failures;
    }
    r.passed = r.failures == 0;
    r.detail = "objective gap (infinite on feasibility disagreement)";
    r.seconds = timer.seconds();
    return r;
}

SuiteResult verify_gradients(std::uint64_t seed) {
    Timer timer;
    SuiteResult r{"gradients"};
    r.tolerance = 1e-4;
    ModelDims dims;
    dims.hidden = 3;
    dims.dense = {4, 3};
    RewardModel model(dims, seed);
    Rng rng(derive_seed(seed, 1));
    // Positive dense biases keep the narrow ReLU layers alive and off their kinks;
    // a dead decoder would make every upstream gradient exactly zero.
    for (std::size_t k = 0; k < model.blocks().size(); ++k) {
        auto blk = model.block(k);
        const bool dense_bias = model.blocks()[k].name.starts_with("dense") &&
                                model.blocks()[k].name.ends_with(".b");
        for (Eigen::Index i = 0; i < blk.size(); ++i)
            blk.data()[i] = dense_bias ? rng.uniform(0.5, 1.0) : blk.data()[i] + 0.1 * rng.normal();
    }
    const int batch = 3;
    const int steps = 4;
    SequenceBatch b;
    for (int t = 0; t < steps; ++t) {
        Eigen::MatrixXd x(dims.input, batch);
        for (Eigen::Index i = 0; i < x.size(); ++i)
            x.data()[i] = rng.normal();
        b.steps.push_back(x);
    }
    const std::vector<int> labels = {0, 2, 1};
    const DropoutMasks masks = sample_masks(dims, batch, steps, rng);
    const LossAndGradient lg = loss_and_gradient(model, b, labels, &masks);

    RewardModel probe = model;
    Eigen::VectorXd& w = probe.parameters();
    constexpr double step = 1e-3;
    // Five-point stencil: truncation ~h^4 and round-off ~1e-13 both sit far below the floor.
    constexpr double kGradientFloor = 1e-7;
    auto loss_at = [&](Eigen::Index i, double value) {
        w[i] = value;
        return batch_loss(probe, b, labels, &masks);
    };
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double keep = w[i];
        // Five-point central stencil.
        const double fd = (loss_at(i, keep - 2 * step) - 8.0 * loss_at(i, keep - step) +
                           8.0 * loss_at(i, keep + step) - loss_at(i, keep + 2 * step)) /
                          (12.0 * step);
        w[i] = keep;
        const double g = lg.gradient[i];
        const double err = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), kGradientFloor});
        ++r.cases;
        r.worst = std::max(r.worst, err);
        if (!(err <= r.tolerance))
            ++r.failures;
    }
    r.passed = r.failures == 0;
    r.detail = "relative error per parameter";
    r.seconds = timer.seconds();
    return r;
}

SuiteResult verify_safety(int seeds, std::uint64_t seed, double duration) {
    Timer timer;
    SuiteResult r{"safety"};
    r.tolerance = 1e-3;
    const DriverKind kinds[] = {DriverKind::rammer, DriverKind::orbiter, DriverKind::goal_seeker};
    double worst = std::numeric_limits<double>::infinity();
    for (int s = 0; s < seeds; ++s) {
        for (const DriverKind kind : kinds) {
            for (int p = 0; p < kPolicyCount; ++p) {
                const std::uint64_t es = derive_seed(seed, static_cast<std::uint64_t>(s));
                Scenario sc;
                sc.initial_policy = {p};
                Rng rng(es);
                sc.start = sample_start(sc, rng);
                DriverSpec d;
                d.kind = kind;
                d.noise = 0.1;
                d.radius = rng.uniform(0.4, 1.2);
                d.direction = rng.uniform() < 0.5 ? 1 : -1;
                d.target = -sc.start.position();
                const EpisodeLog log = run_episode(sc, d, nullptr, duration, es);
                const EpisodeSummary sum = summarize(log);
                ++r.cases;
                worst = std::min(worst, sum.min_h);
                if (sum.min_h < -r.tolerance || !sum.within_bounds)
                    ++r.failures;
            }
        }
    }
    r.worst = worst;
    r.passed = r.failures == 0;
    r.detail = "min h over all ticks and episodes";
    r.seconds = timer.seconds();
    return r;
}

SuiteResult verify_determinism(std::uint64_t seed) {
    Timer timer;
    SuiteResult r{"determinism"};
    Scenario sc;
    DriverSpec d;
    d.kind = DriverKind::orbiter;
    d.noise = 0.1;
    d.radius = 0.8;
    const EpisodeLog a = run_episode(sc, d, nullptr, 8.0, seed);
    const EpisodeLog b = run_episode(sc, d, nullptr, 8.0, seed);
    std::ostringstream sa, sb;
    write_episode_log(a, sa);
    write_episode_log(b, sb);
    ++r.cases;
    if (sa.str() != sb.str())
        ++r.failures;

    std::istringstream in(sa.str());
    const ReplayResult rep = replay(read_episode_log(in));
    ++r.cases;
    if (!rep.bit_exact)
        ++r.failures;

    Dataset fixture;
    for (int t = 0; t < 6; ++t)
        fixture.rows.push_back({0, t, {}, t < 3 ? 0 : 2, 0});
    const Dataset shifted = shift_labels(fixture, 2);
    const std::vector<int> expected = {0, 2, 2, 2};
    std::vector<int> got;
    for (const auto& row : shifted.rows)
        got.push_back(row.label);
    ++r.cases;
    if (got != expected)
        ++r.failures;

    r.passed = r.failures == 0;
    r.detail = "repeat run, replay and label-shift fixture";
    r.seconds = timer.seconds();
    return r;
}

std::vector<SuiteResult> verify_all(std::uint64_t seed, bool quick) {
    const int scale = quick ? 1 : 10;
    return {
        verify_backup_invariance(100 * scale, derive_seed(seed, 1)),
        verify_sensitivities(10 * scale, derive_seed(seed, 2)),
        verify_qp(20 * scale, derive_seed(seed, 3)),
        verify_gradients(derive_seed(seed, 4)),
        verify_safety(quick ? 2 : 10, derive_seed(seed, 5)),
        verify_determinism(derive_seed(seed, 6)),
    };
}

} // namespace mbcbf
