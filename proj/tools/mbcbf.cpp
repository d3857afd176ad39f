// mbcbf: headless entry point for simulation, data collection, training,
// evaluation, replay, the live session service and the invariant suites.
//
// stdout carries JSON lines: the resolved configuration first, then results.
// Failures print {"error": {...}} on stderr. Exit codes: 0 ok, 1 runtime
// error or failed check, 2 usage error, 3 version mismatch.

#include "mbcbf/collect.hpp"
#include "mbcbf/episode.hpp"
#include "mbcbf/error.hpp"
#include "mbcbf/training.hpp"
#include "mbcbf/verify.hpp"
#include "mbcbf/version.hpp"
#ifdef MBCBF_WITH_SESSION
#include "mbcbf/session.hpp"
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mbcbf;

namespace {

struct UsageError : Error {
    using Error::Error;
};

void emit(const json& j) {
    std::cout << j.dump() << '\n' << std::flush;
}

void require_file(const std::string& path, const char* what) {
    if (!fs::is_regular_file(path))
        throw UsageError(std::string(what) + " not found: " + path);
}

void require_writable(const std::string& path, const char* what) {
    const fs::path parent = fs::absolute(path).parent_path();
    if (!fs::is_directory(parent))
        throw UsageError(std::string(what) + " directory does not exist: " + parent.string());
}

Scenario scenario_arg(const std::string& path) {
    if (path.empty())
        return Scenario{};
    require_file(path, "scenario");
    return load_scenario(path);
}

std::shared_ptr<RewardModel> model_arg(const std::string& path) {
    if (path.empty())
        return nullptr;
    require_file(path, "model");
    return std::make_shared<RewardModel>(load_model(path));
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string scenario, driver = "rammer", model, out, table;
    std::vector<double> target;
    double radius = 1.0;
    int direction = 1;
    double noise = 0.0;
    int policy = -1;
    int seeds = 1;
    std::uint64_t seed = 0;
    double duration = 30.0;
    bool random_start = false;
};

DriverSpec driver_arg(const SimulateArgs& a, const Scenario& sc) {
    DriverSpec d;
    if (a.driver.ends_with(".json")) {
        require_file(a.driver, "driver");
        std::ifstream is(a.driver);
        d = driver_from_json(json::parse(is));
        return d;
    }
    d.kind = driver_kind_from_string(a.driver);
    d.noise = a.noise;
    d.radius = a.radius;
    d.direction = a.direction;
    if (!a.target.empty()) {
        if (a.target.size() != 2)
            throw UsageError("--target takes x,y");
        d.target = {a.target[0], a.target[1]};
    } else {
        d.target = -sc.start.position();
    }
    return d;
}

int run_simulate(const SimulateArgs& a) {
    Scenario sc = scenario_arg(a.scenario);
    if (a.policy >= 0)
        sc.initial_policy = {a.policy};
    const auto model = model_arg(a.model);
    const DriverSpec driver = driver_arg(a, sc);
    if (a.seeds < 1)
        throw UsageError("--seeds must be at least 1");
    if (!a.out.empty()) {
        if (a.seeds > 1)
            fs::create_directories(a.out);
        else
            require_writable(a.out, "--out");
    }
    if (!a.table.empty())
        require_writable(a.table, "--table");

    emit({{"command", "simulate"},
          {"version", kLibraryVersion},
          {"config",
           {{"scenario", to_json(sc)},
            {"driver", to_json(driver)},
            {"model", model ? json(model->fingerprint()) : json(nullptr)},
            {"seeds", a.seeds},
            {"seed", a.seed},
            {"duration", a.duration},
            {"random_start", a.random_start},
            {"out", a.out},
            {"table", a.table}}}});

    std::ofstream table;
    if (!a.table.empty()) {
        table.open(a.table);
        table << "seed,tick,t,x,y,theta,v_d,omega_d,v,omega,active,h,flow_min,terminal,feasible\n";
        table.precision(17);
    }

    double min_h = std::numeric_limits<double>::infinity();
    double max_v = 0.0, max_w = 0.0;
    std::size_t interventions = 0, infeasible = 0, switches = 0, unvalidated = 0;
    bool within = true;
    for (int i = 0; i < a.seeds; ++i) {
        const std::uint64_t seed = a.seed + static_cast<std::uint64_t>(i);
        Scenario esc = sc;
        if (a.random_start) {
            Rng rng(derive_seed(seed, 0x57a7));
            esc.start = sample_start(esc, rng);
        }
        const EpisodeLog log = run_episode(esc, driver, model.get(), a.duration, seed);
        const EpisodeSummary s = summarize(log);
        for (const auto& e : log.switches)
            unvalidated += e.validated ? 0 : 1;
        min_h = std::min(min_h, s.min_h);
        max_v = std::max(max_v, s.max_abs_v);
        max_w = std::max(max_w, s.max_abs_omega);
        interventions += s.interventions;
        infeasible += s.infeasible_ticks;
        switches += s.switches;
        within = within && s.within_bounds;
        emit({{"episode", i},
              {"seed", seed},
              {"ticks", s.ticks},
              {"min_h", s.min_h},
              {"interventions", s.interventions},
              {"infeasible_ticks", s.infeasible_ticks},
              {"switches", s.switches},
              {"rejected_switches", s.rejected_switches},
              {"within_bounds", s.within_bounds},
              {"final_state", to_json(s.final_state)}});
        if (!a.out.empty()) {
            const fs::path p = a.seeds > 1 ? fs::path(a.out) / ("episode_" + std::to_string(seed) + ".jsonl")
                                           : fs::path(a.out);
            save_episode_log(log, p);
        }
        if (table.is_open()) {
            for (const TickRecord& r : log.ticks) {
                table << seed << ',' << r.tick << ',' << r.t << ',' << r.state.x << ',' << r.state.y << ','
                      << r.state.theta << ',' << r.u_d.v << ',' << r.u_d.omega << ',' << r.u_safe.v << ','
                      << r.u_safe.omega << ',' << r.active << ',' << r.h << ',' << r.flow_min << ','
                      << r.terminal << ',' << (r.feasible ? 1 : 0) << '\n';
            }
        }
    }
    emit({{"summary",
           {{"episodes", a.seeds},
            {"min_h", min_h},
            {"max_abs_v", max_v},
            {"max_abs_omega", max_w},
            {"interventions", interventions},
            {"infeasible_ticks", infeasible},
            {"switches", switches},
            {"unvalidated_switches", unvalidated},
            {"within_bounds", within},
            {"safe", min_h >= -1e-3 && within}}}});
    return 0;
}

// ---------------------------------------------------------------------------

struct CollectArgs {
    std::string scenario, curriculum = "synthetic", out;
    int episodes = 0;
    std::int64_t rows = 19000;
    std::uint64_t seed = 0;
    double validation_fraction = 0.2;
};

int run_collect(const CollectArgs& a) {
    const Scenario sc = scenario_arg(a.scenario);
    require_writable(a.out, "--out");
    std::vector<CurriculumEntry> cur;
    int episodes = a.episodes;
    if (a.curriculum == "synthetic") {
        if (episodes <= 0) {
            // Grow the synthetic curriculum until it covers the requested rows.
            int n = 1;
            while (curriculum_ticks(synthetic_curriculum(sc, n, a.seed), sc.tick_dt) < a.rows)
                n *= 2;
            int lo = n / 2, hi = n;
            while (lo + 1 < hi) {
                const int mid = (lo + hi) / 2;
                if (curriculum_ticks(synthetic_curriculum(sc, mid, a.seed), sc.tick_dt) >= a.rows)
                    hi = mid;
                else
                    lo = mid;
            }
            episodes = hi;
        }
        cur = synthetic_curriculum(sc, episodes, a.seed);
    } else {
        require_file(a.curriculum, "curriculum");
        cur = load_curriculum(a.curriculum);
        if (episodes <= 0)
            episodes = static_cast<int>(cur.size());
    }
    emit({{"command", "collect"},
          {"version", kLibraryVersion},
          {"config",
           {{"scenario", to_json(sc)},
            {"curriculum", a.curriculum},
            {"episodes", episodes},
            {"rows", a.rows},
            {"seed", a.seed},
            {"validation_fraction", a.validation_fraction},
            {"out", a.out}}}});
    const Dataset d = collect_dataset(sc, cur, episodes, a.seed, a.validation_fraction);
    save_dataset(d, a.out);
    std::vector<int> counts(static_cast<std::size_t>(d.m_k), 0);
    for (const auto& r : d.rows)
        ++counts[static_cast<std::size_t>(r.label)];
    emit({{"rows", d.rows.size()},
          {"episodes", episodes},
          {"label_counts", counts},
          {"validation_episodes", d.validation_episodes}});
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string dataset, config, out, metrics, logits_mode;
    std::optional<int> epochs, label_shift;
    std::optional<std::uint64_t> seed;
    std::optional<double> target_accuracy;
};

int run_train(const TrainArgs& a) {
    require_file(a.dataset, "dataset");
    require_writable(a.out, "--out");
    if (!a.metrics.empty())
        require_writable(a.metrics, "--metrics");
    TrainConfig cfg;
    if (!a.config.empty()) {
        require_file(a.config, "config");
        std::ifstream is(a.config);
        cfg = train_config_from_json(json::parse(is));
    }
    if (a.epochs)
        cfg.epochs = *a.epochs;
    if (a.label_shift)
        cfg.label_shift = *a.label_shift;
    if (a.seed)
        cfg.seed = *a.seed;
    if (a.target_accuracy)
        cfg.target_accuracy = *a.target_accuracy;
    if (!a.logits_mode.empty())
        cfg.dims.logits_mode = logits_mode_from_string(a.logits_mode);
    cfg.validate();

    const Dataset d = load_dataset(a.dataset);
    emit({{"command", "train"},
          {"version", kLibraryVersion},
          {"config", {{"dataset", a.dataset}, {"out", a.out}, {"train", to_json(cfg)}}}});
    std::ofstream metrics;
    if (!a.metrics.empty())
        metrics.open(a.metrics);
    const TrainResult res = train(d, cfg, [&](const EpochMetrics& m) {
        emit({{"epoch", to_json(m)}});
        if (metrics.is_open())
            metrics << to_json(m).dump() << '\n' << std::flush;
    });
    save_model(res.model, a.out);
    const EvalMetrics val = evaluate(res.model, d, Split::validation);
    emit({{"result",
           {{"epochs_run", res.history.size()},
            {"reached_target", res.reached_target},
            {"validation", to_json(val)},
            {"fingerprint", res.model.fingerprint()},
            {"model", a.out}}}});
    return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string dataset, model, split;
};

int run_eval(const EvalArgs& a) {
    require_file(a.dataset, "dataset");
    require_file(a.model, "model");
    const Dataset d = load_dataset(a.dataset);
    const RewardModel m = load_model(a.model);
    Split split = d.validation_episodes.empty() ? Split::all : Split::validation;
    if (a.split == "all")
        split = Split::all;
    else if (a.split == "train")
        split = Split::train;
    else if (a.split == "validation")
        split = Split::validation;
    else if (!a.split.empty())
        throw UsageError("--split must be all, train or validation");
    const char* names[] = {"all", "train", "validation"};
    emit({{"command", "eval"},
          {"version", kLibraryVersion},
          {"config",
           {{"dataset", a.dataset},
            {"model", a.model},
            {"fingerprint", m.fingerprint()},
            {"label_shift", m.label_shift()},
            {"split", names[static_cast<int>(split)]}}}});
    emit({{"result", to_json(evaluate(m, d, split))}});
    return 0;
}

// ---------------------------------------------------------------------------

struct ReplayArgs {
    std::string log, model, out;
};

int run_replay(const ReplayArgs& a) {
    require_file(a.log, "log");
    if (!a.out.empty())
        require_writable(a.out, "--out");
    const auto model = model_arg(a.model);
    const EpisodeLog log = load_episode_log(a.log);
    emit({{"command", "replay"},
          {"version", kLibraryVersion},
          {"config", {{"log", a.log}, {"model", model ? json(model->fingerprint()) : json(nullptr)}, {"out", a.out}}}});
    const ReplayResult r = replay(log, model.get());
    if (!a.out.empty())
        save_episode_log(r.log, a.out);
    std::string verdict = r.bit_exact ? "bit-exact" : "diverged";
    if (r.counterfactual)
        verdict = "counterfactual";
    emit({{"result",
           {{"verdict", verdict},
            {"bit_exact", r.bit_exact},
            {"counterfactual", r.counterfactual},
            {"first_divergence", r.first_divergence ? json(*r.first_divergence) : json(nullptr)},
            {"ticks", r.log.ticks.size()},
            {"switches", r.log.switches.size()}}}});
    return (r.bit_exact || r.counterfactual) ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct ServeArgs {
    std::string scenario, model, address = "127.0.0.1", log_out, dataset_out;
    std::optional<int> port;
    double duration = 0.0;
    double warn_h = 0.5, alert_h = 0.2;
};

int run_serve(const ServeArgs& a) {
#ifdef MBCBF_WITH_SESSION
    SessionConfig cfg;
    cfg.scenario = scenario_arg(a.scenario);
    cfg.model = model_arg(a.model);
    cfg.address = a.address;
    cfg.port = kDefaultPort;
    if (const char* env = std::getenv(kPortEnvVar)) {
        try {
            cfg.port = static_cast<std::uint16_t>(std::stoi(env));
        } catch (const std::exception&) {
            throw UsageError(std::string(kPortEnvVar) + " is not a port number");
        }
    }
    if (a.port)
        cfg.port = static_cast<std::uint16_t>(*a.port);
    cfg.thresholds = {a.warn_h, a.alert_h};
    if (a.duration > 0.0)
        cfg.max_ticks = static_cast<std::int64_t>(std::llround(a.duration / cfg.scenario.tick_dt));
    cfg.handle_signals = true;
    if (!a.log_out.empty())
        require_writable(a.log_out, "--log-out");
    if (!a.dataset_out.empty())
        require_writable(a.dataset_out, "--dataset-out");

    SessionServer server(cfg);
    server.start();
    emit({{"command", "serve"},
          {"version", kLibraryVersion},
          {"config",
           {{"scenario", to_json(cfg.scenario)},
            {"model", cfg.model ? json(cfg.model->fingerprint()) : json(nullptr)},
            {"address", cfg.address},
            {"port", server.port()},
            {"duration", a.duration},
            {"thresholds", {{"warn_h", cfg.thresholds.warn_h}, {"alert_h", cfg.thresholds.alert_h}}},
            {"log_out", a.log_out},
            {"dataset_out", a.dataset_out}}}});
    server.wait();
    const EpisodeLog log = server.log();
    if (!a.log_out.empty())
        save_episode_log(log, a.log_out);
    const Dataset live = server.live_dataset();
    if (!a.dataset_out.empty())
        save_dataset(live, a.dataset_out);
    const EpisodeSummary s = summarize(log);
    emit({{"result",
           {{"ticks", s.ticks},
            {"min_h", s.ticks ? json(s.min_h) : json(nullptr)},
            {"switches", s.switches},
            {"labelled_rows", live.rows.size()}}}});
    return 0;
#else
    (void)a;
    throw UsageError("this build has no session service");
#endif
}

// ---------------------------------------------------------------------------

int run_verify(std::uint64_t seed, bool quick) {
    emit({{"command", "verify"}, {"version", kLibraryVersion}, {"config", {{"seed", seed}, {"quick", quick}}}});
    bool ok = true;
    for (const SuiteResult& r : verify_all(seed, quick)) {
        ok = ok && r.passed;
        emit({{"suite", to_json(r)}});
    }
    emit({{"result", {{"passed", ok}}}});
    return ok ? 0 : 1;
}

int fail(const std::string& kind, const std::string& message, int code) {
    std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Backup-CBF safety filter with learned backup switching"};
    app.set_version_flag("--version", std::string(kLibraryVersion));
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* c_sim = app.add_subcommand("simulate", "Run seeded episodes with a scripted driver");
    c_sim->add_option("--scenario", sim.scenario, "Scenario file (default built-in cone scenario)");
    c_sim->add_option("--driver", sim.driver,
                      "idle|goal_seeker|orbiter|rammer|waypoint_sequence or a driver .json file");
    c_sim->add_option("--target", sim.target, "goal_seeker target x,y")->delimiter(',')->expected(2);
    c_sim->add_option("--radius", sim.radius, "orbiter radius");
    c_sim->add_option("--direction", sim.direction, "orbiter direction (+1/-1)");
    c_sim->add_option("--noise", sim.noise, "command noise as a fraction of the bounds");
    c_sim->add_option("--policy", sim.policy, "initial backup policy");
    c_sim->add_option("--model", sim.model, "reward model file for learned switching");
    c_sim->add_option("--seeds", sim.seeds, "number of seeded episodes");
    c_sim->add_option("--seed", sim.seed, "base seed");
    c_sim->add_option("--duration", sim.duration, "episode length in seconds");
    c_sim->add_flag("--random-start", sim.random_start, "sample the start pose per seed");
    c_sim->add_option("--out", sim.out, "episode log (a directory when --seeds > 1)");
    c_sim->add_option("--table", sim.table, "CSV trajectory table for plotting");

    CollectArgs col;
    auto* c_col = app.add_subcommand("collect", "Collect a labelled dataset from a curriculum");
    c_col->add_option("--scenario", col.scenario, "Scenario file");
    c_col->add_option("--curriculum", col.curriculum, "curriculum .json or 'synthetic'");
    c_col->add_option("--episodes", col.episodes, "episodes (default: curriculum size or enough for --rows)");
    c_col->add_option("--rows", col.rows, "target rows for the synthetic curriculum");
    c_col->add_option("--seed", col.seed, "seed");
    c_col->add_option("--validation-fraction", col.validation_fraction, "share of episodes held out");
    c_col->add_option("--out", col.out, "dataset file")->required();

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train", "Train the reward model");
    c_tr->add_option("--dataset", tr.dataset, "dataset file")->required();
    c_tr->add_option("--config", tr.config, "training config .json");
    c_tr->add_option("--out", tr.out, "model file")->required();
    c_tr->add_option("--epochs", tr.epochs, "epochs");
    c_tr->add_option("--label-shift", tr.label_shift, "label shift in ticks");
    c_tr->add_option("--seed", tr.seed, "seed");
    c_tr->add_option("--target-accuracy", tr.target_accuracy, "stop once validation accuracy reaches this");
    c_tr->add_option("--logits-mode", tr.logits_mode, "sigmoid_softmax|logits");
    c_tr->add_option("--metrics", tr.metrics, "per-epoch metrics JSONL");

    EvalArgs ev;
    auto* c_ev = app.add_subcommand("eval", "Accuracy and confusion of a model on a dataset");
    c_ev->add_option("--dataset", ev.dataset, "dataset file")->required();
    c_ev->add_option("--model", ev.model, "model file")->required();
    c_ev->add_option("--split", ev.split, "all|train|validation");

    ReplayArgs rp;
    auto* c_rp = app.add_subcommand("replay", "Re-simulate a recorded episode log");
    c_rp->add_option("--log", rp.log, "episode log")->required();
    c_rp->add_option("--model", rp.model, "model for counterfactual replay");
    c_rp->add_option("--out", rp.out, "write the replayed log");

    ServeArgs sv;
    auto* c_sv = app.add_subcommand("serve", "Run the live 20 Hz WebSocket session");
    c_sv->add_option("--scenario", sv.scenario, "Scenario file");
    c_sv->add_option("--model", sv.model, "reward model file");
    c_sv->add_option("--address", sv.address, "listen address");
    c_sv->add_option("--port", sv.port, std::string("listen port (default $") + kPortEnvVar + " or " +
                                            std::to_string(kDefaultPort) + ")");
    c_sv->add_option("--duration", sv.duration, "stop after this many seconds (0 = until signalled)");
    c_sv->add_option("--warn-h", sv.warn_h, "warn cue threshold on h");
    c_sv->add_option("--alert-h", sv.alert_h, "alert cue threshold on h");
    c_sv->add_option("--log-out", sv.log_out, "write the session episode log on exit");
    c_sv->add_option("--dataset-out", sv.dataset_out, "write the live labelled dataset on exit");

    std::uint64_t verify_seed = 0;
    bool verify_quick = false;
    auto* c_vf = app.add_subcommand("verify", "Run the invariant suites");
    c_vf->add_option("--seed", verify_seed, "seed");
    c_vf->add_flag("--quick", verify_quick, "smaller suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 2);
    }

    try {
        if (*c_sim)
            return run_simulate(sim);
        if (*c_col)
            return run_collect(col);
        if (*c_tr)
            return run_train(tr);
        if (*c_ev)
            return run_eval(ev);
        if (*c_rp)
            return run_replay(rp);
        if (*c_sv)
            return run_serve(sv);
        if (*c_vf)
            return run_verify(verify_seed, verify_quick);
    } catch (const UsageError& e) {
        return fail("usage", e.what(), 2);
    } catch (const VersionMismatch& e) {
        return fail("version_mismatch", e.what(), 3);
    } catch (const FormatError& e) {
        return fail("format", e.what(), 1);
    } catch (const ScenarioError& e) {
        return fail("scenario", e.what(), 1);
    } catch (const ModelError& e) {
        return fail("model", e.what(), 1);
    } catch (const json::exception& e) {
        return fail("format", e.what(), 1);
    } catch (const std::exception& e) {
        return fail("runtime", e.what(), 1);
    }
    return 2;
}
