#include "mbcbf/collect.hpp"
#include "mbcbf/episode.hpp"
#include "mbcbf/error.hpp"
#include "mbcbf/features.hpp"
#include "mbcbf/flow.hpp"
#include "mbcbf/qp.hpp"
#include "mbcbf/safety_filter.hpp"
#include "mbcbf/scenario.hpp"
#include "mbcbf/switch_governor.hpp"
#include "mbcbf/training.hpp"
#include "mbcbf/verify.hpp"
#include "mbcbf/version.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace mbcbf;
using nlohmann::json;

namespace {

// JSON values cross the boundary through the json module.
py::object to_py(const json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

json from_py(const py::handle& o) {
    return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

Scenario scenario_arg(const py::object& o) {
    if (o.is_none())
        return Scenario{};
    Scenario sc = scenario_from_json(from_py(o));
    sc.validate();
    return sc;
}

PolicyParams params_arg(double v_max, double omega_max, double epsilon) {
    PolicyParams p;
    p.bounds = {v_max, omega_max};
    p.epsilon = epsilon;
    p.validate();
    return p;
}

DriverSpec driver_arg(const py::object& o) {
    if (py::isinstance<py::str>(o)) {
        DriverSpec d;
        d.kind = driver_kind_from_string(o.cast<std::string>());
        return d;
    }
    return driver_from_json(from_py(o));
}

py::dict summary_dict(const EpisodeSummary& s) {
    py::dict d;
    d["ticks"] = s.ticks;
    d["min_h"] = s.min_h;
    d["max_abs_v"] = s.max_abs_v;
    d["max_abs_omega"] = s.max_abs_omega;
    d["interventions"] = s.interventions;
    d["infeasible_ticks"] = s.infeasible_ticks;
    d["switches"] = s.switches;
    d["rejected_switches"] = s.rejected_switches;
    d["within_bounds"] = s.within_bounds;
    d["final_state"] = s.final_state;
    return d;
}

// Smallest synthetic curriculum covering `rows` ticks.
int episodes_for_rows(const Scenario& sc, std::int64_t rows, std::uint64_t seed) {
    const auto covers = [&](int n) { return curriculum_ticks(synthetic_curriculum(sc, n, seed), sc.tick_dt) >= rows; };
    int n = 1;
    while (!covers(n))
        n *= 2;
    int lo = n / 2, hi = n;
    while (lo + 1 < hi) {
        const int mid = (lo + hi) / 2;
        (covers(mid) ? hi : lo) = mid;
    }
    return hi;
}

Split split_arg(const std::string& s) {
    if (s == "all")
        return Split::all;
    if (s == "train")
        return Split::train;
    if (s == "validation")
        return Split::validation;
    throw py::value_error("split must be all, train or validation");
}

} // namespace

PYBIND11_MODULE(_mbcbf, m) {
    m.doc() = "Backup-CBF safety filter with learned switching between backup controllers";
    m.attr("__version__") = kLibraryVersion;

    // Translators run newest first, so the base goes first.
    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ScenarioError>(m, "ScenarioError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<VersionMismatch>(m, "VersionMismatch", PyExc_RuntimeError);
    py::register_exception<ModelError>(m, "ModelError", PyExc_RuntimeError);

    py::class_<State>(m, "State")
        .def(py::init<double, double, double>(), py::arg("x") = 0.0, py::arg("y") = 0.0,
             py::arg("theta") = 0.0)
        .def_readwrite("x", &State::x)
        .def_readwrite("y", &State::y)
        .def_readwrite("theta", &State::theta)
        .def("__eq__", &State::operator==)
        .def("__repr__", [](const State& s) {
            std::ostringstream os;
            os << "State(" << s.x << ", " << s.y << ", " << s.theta << ")";
            return os.str();
        });

    py::class_<Input>(m, "Input")
        .def(py::init<double, double>(), py::arg("v") = 0.0, py::arg("omega") = 0.0)
        .def_readwrite("v", &Input::v)
        .def_readwrite("omega", &Input::omega)
        .def("__eq__", &Input::operator==)
        .def("__repr__", [](const Input& u) {
            std::ostringstream os;
            os << "Input(" << u.v << ", " << u.omega << ")";
            return os.str();
        });

    py::class_<Obstacle>(m, "Obstacle")
        .def(py::init([](Vec2 center, double radius, Vec2 velocity) {
                 Obstacle o{center, radius, velocity};
                 o.validate();
                 return o;
             }),
             py::arg("center"), py::arg("radius"), py::arg("velocity") = Vec2::Zero().eval())
        .def_readwrite("center", &Obstacle::center)
        .def_readwrite("radius", &Obstacle::radius)
        .def_readwrite("velocity", &Obstacle::velocity);

    py::class_<FilterOutput>(m, "FilterOutput")
        .def_readonly("u_safe", &FilterOutput::u_safe)
        .def_readonly("u_desired", &FilterOutput::u_desired)
        .def_readonly("feasible", &FilterOutput::feasible)
        .def_readonly("h_now", &FilterOutput::h_now)
        .def_readonly("min_flow_margin", &FilterOutput::min_flow_margin)
        .def_readonly("terminal_margin", &FilterOutput::terminal_margin)
        .def_readonly("intervention", &FilterOutput::intervention)
        .def_readonly("n_constraints", &FilterOutput::n_constraints);

    m.def("default_scenario", [] { return to_py(to_json(Scenario{})); },
          "Built-in scenario as a dict; edit and pass back wherever a scenario is accepted.");

    m.def("vector_field", &vector_field, py::arg("state"), py::arg("u"));
    m.def("step_constant", &step_constant, py::arg("state"), py::arg("u"), py::arg("dt"));
    m.def("h_distance", py::overload_cast<const State&, const Obstacle&>(&h_distance), py::arg("state"),
          py::arg("obstacle"));

    m.def(
        "policy_control",
        [](int policy, const State& s, const Obstacle& o, double v_max, double omega_max, double eps) {
            return policy_control({policy}, s, o, params_arg(v_max, omega_max, eps));
        },
        py::arg("policy"), py::arg("state"), py::arg("obstacle"), py::arg("v_max") = 0.5,
        py::arg("omega_max") = 1.0, py::arg("epsilon") = 0.1);
    m.def(
        "policy_barrier",
        [](int policy, const State& s, const Obstacle& o, double v_max, double omega_max, double eps) {
            return policy_barrier({policy}, s, o, params_arg(v_max, omega_max, eps));
        },
        py::arg("policy"), py::arg("state"), py::arg("obstacle"), py::arg("v_max") = 0.5,
        py::arg("omega_max") = 1.0, py::arg("epsilon") = 0.1);

    m.def(
        "integrate_backup_flow",
        [](const State& x0, int policy, const Obstacle& o, double horizon, int n_tau, double v_max,
           double omega_max, double eps) {
            const FlowResult r =
                integrate_backup_flow(x0, {policy}, o, params_arg(v_max, omega_max, eps), horizon, n_tau);
            py::list out;
            for (const FlowSample& s : r.samples) {
                py::dict d;
                d["tau"] = s.tau;
                d["state"] = s.state;
                d["sensitivity"] = Mat3(s.sensitivity);
                out.append(d);
            }
            return out;
        },
        py::arg("state"), py::arg("policy"), py::arg("obstacle"), py::arg("horizon") = 2.0,
        py::arg("n_tau") = 20, py::arg("v_max") = 0.5, py::arg("omega_max") = 1.0, py::arg("epsilon") = 0.1,
        "Backup flow samples with their sensitivities d phi / d x0.");

    m.def(
        "solve_qp",
        [](const Input& target, const std::vector<std::pair<Vec2, double>>& rows, double v_max,
           double omega_max, bool oracle) {
            QProblem q;
            q.target = target;
            q.box = {v_max, omega_max};
            for (const auto& [a, b] : rows)
                q.ineqs.push_back({a, b});
            const QSolution s = oracle ? kkt_enumeration_oracle(q) : solve(q);
            py::dict d;
            d["u_star"] = s.u_star;
            d["feasible"] = s.feasible;
            d["active_set"] = s.active_set;
            d["objective"] = s.objective;
            return d;
        },
        py::arg("target"), py::arg("rows"), py::arg("v_max") = 0.5, py::arg("omega_max") = 1.0,
        py::arg("oracle") = false, "Projection onto {a . u >= b} within the input box.");

    m.def(
        "safety_filter",
        [](const State& x, const Input& u_d, int policy, const py::object& scenario) {
            const Scenario sc = scenario_arg(scenario);
            return filter(x, u_d, {policy}, sc.inflated_obstacles(), sc.filter_config(), sc.policy_params());
        },
        py::arg("state"), py::arg("u_d"), py::arg("policy") = 0, py::arg("scenario") = py::none());

    m.def(
        "validate_switch",
        [](const State& x, int candidate, const Input& u_d, const py::object& scenario) {
            const Scenario sc = scenario_arg(scenario);
            return validate_switch(x, {candidate}, u_d, sc.inflated_obstacles(), sc.filter_config(),
                                   sc.policy_params());
        },
        py::arg("state"), py::arg("candidate"), py::arg("u_d"), py::arg("scenario") = py::none());

    m.def(
        "propose", [](const std::vector<double>& rewards, int active) { return propose(rewards, {active}).index; },
        py::arg("rewards"), py::arg("active"));

    m.def(
        "extract_features",
        [](const State& x, const Vec3& xdot, const Input& u_d, const py::object& scenario) {
            const Scenario sc = scenario_arg(scenario);
            const FeatureVector f = extract_features(x, xdot, u_d, sc.inflated_obstacles(), sc.goal_horizon);
            return std::vector<double>(f.begin(), f.end());
        },
        py::arg("state"), py::arg("xdot"), py::arg("u_d"), py::arg("scenario") = py::none());

    py::class_<RewardModel>(m, "RewardModel")
        .def(py::init([](const py::object& dims, std::uint64_t seed) {
                 return RewardModel(dims.is_none() ? ModelDims{} : model_dims_from_json(from_py(dims)), seed);
             }),
             py::arg("dims") = py::none(), py::arg("seed") = 0)
        .def_static("load", [](const std::string& path) { return load_model(path); }, py::arg("path"))
        .def("save", [](const RewardModel& r, const std::string& path) { save_model(r, path); }, py::arg("path"))
        .def_property_readonly("dims", [](const RewardModel& r) { return to_py(to_json(r.dims())); })
        .def_property_readonly("label_shift", &RewardModel::label_shift)
        .def_property_readonly("parameter_count", [](const RewardModel& r) { return r.parameters().size(); })
        .def("fingerprint", &RewardModel::fingerprint)
        .def(
            "forward",
            [](const RewardModel& r, const Eigen::MatrixXd& window, bool normalized) {
                return r.forward(FeatureWindow{window, normalized});
            },
            py::arg("window"), py::arg("normalized") = false,
            "Rewards for a (12, T) feature window, oldest column first.");

    py::class_<EpisodeLog>(m, "EpisodeLog")
        .def("__len__", [](const EpisodeLog& l) { return l.ticks.size(); })
        .def_property_readonly("header", [](const EpisodeLog& l) { return to_py(to_json(l.header)); })
        .def_property_readonly("ticks",
                               [](const EpisodeLog& l) {
                                   py::list out;
                                   for (const TickRecord& r : l.ticks)
                                       out.append(to_py(to_json(r)));
                                   return out;
                               })
        .def_property_readonly("switches",
                               [](const EpisodeLog& l) {
                                   py::list out;
                                   for (const SwitchEvent& e : l.switches)
                                       out.append(to_py(to_json(e)));
                                   return out;
                               })
        .def_readonly("rejected_switches", &EpisodeLog::rejected_switches)
        .def("summary", [](const EpisodeLog& l) { return summary_dict(summarize(l)); })
        .def("save", [](const EpisodeLog& l, const std::string& path) { save_episode_log(l, path); },
             py::arg("path"))
        .def("to_jsonl", [](const EpisodeLog& l) {
            std::ostringstream os;
            write_episode_log(l, os);
            return os.str();
        });

    m.def("load_episode_log", [](const std::string& path) { return load_episode_log(path); }, py::arg("path"));

    m.def(
        "simulate",
        [](const py::object& driver, const py::object& scenario, const RewardModel* model, double duration,
           std::uint64_t seed) {
            const Scenario sc = scenario_arg(scenario);
            const DriverSpec d = driver_arg(driver);
            py::gil_scoped_release release;
            return run_episode(sc, d, model, duration, seed);
        },
        py::arg("driver"), py::arg("scenario") = py::none(), py::arg("model") = nullptr,
        py::arg("duration") = 30.0, py::arg("seed") = 0,
        "One seeded episode. `driver` is a kind name or a driver dict.");

    m.def(
        "replay",
        [](const EpisodeLog& log, const RewardModel* model) {
            ReplayResult r;
            {
                py::gil_scoped_release release;
                r = replay(log, model);
            }
            py::dict d;
            d["bit_exact"] = r.bit_exact;
            d["first_divergence"] = r.first_divergence ? py::cast(*r.first_divergence) : py::none();
            d["counterfactual"] = r.counterfactual;
            d["log"] = std::move(r.log);
            return d;
        },
        py::arg("log"), py::arg("model") = nullptr);

    py::class_<Dataset>(m, "Dataset")
        .def("__len__", [](const Dataset& d) { return d.rows.size(); })
        .def_readonly("m_k", &Dataset::m_k)
        .def_readonly("validation_episodes", &Dataset::validation_episodes)
        .def_property_readonly("features",
                               [](const Dataset& d) {
                                   Eigen::MatrixXd f(static_cast<Eigen::Index>(d.rows.size()), kFeatureCount);
                                   for (std::size_t i = 0; i < d.rows.size(); ++i)
                                       for (int j = 0; j < kFeatureCount; ++j)
                                           f(static_cast<Eigen::Index>(i), j) = d.rows[i].gamma[j];
                                   return f;
                               })
        .def_property_readonly("labels",
                               [](const Dataset& d) {
                                   std::vector<int> v;
                                   for (const auto& r : d.rows)
                                       v.push_back(r.label);
                                   return v;
                               })
        .def_property_readonly("episodes", &Dataset::episodes)
        .def_property_readonly("row_episodes",
                               [](const Dataset& d) {
                                   std::vector<int> v;
                                   for (const auto& r : d.rows)
                                       v.push_back(r.episode);
                                   return v;
                               })
        .def("shift_labels", [](const Dataset& d, int k) { return shift_labels(d, k); }, py::arg("k"))
        .def("save", [](const Dataset& d, const std::string& path) { save_dataset(d, path); }, py::arg("path"));

    m.def("load_dataset", [](const std::string& path) { return load_dataset(path); }, py::arg("path"));

    m.def(
        "collect",
        [](const py::object& scenario, int episodes, std::int64_t rows, std::uint64_t seed, double val) {
            const Scenario sc = scenario_arg(scenario);
            py::gil_scoped_release release;
            if (episodes <= 0)
                episodes = episodes_for_rows(sc, rows, seed);
            return collect_dataset(sc, synthetic_curriculum(sc, episodes, seed), episodes, seed, val);
        },
        py::arg("scenario") = py::none(), py::arg("episodes") = 0, py::arg("rows") = 19000,
        py::arg("seed") = 0, py::arg("validation_fraction") = 0.2,
        "Synthetic-curriculum dataset; sized by `episodes` or, when that is 0, by `rows`.");

    m.def(
        "train",
        [](const Dataset& d, const py::object& config) {
            const TrainConfig cfg = config.is_none() ? TrainConfig{} : train_config_from_json(from_py(config));
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = train(d, cfg);
            }
            py::list history;
            for (const EpochMetrics& e : r.history)
                history.append(to_py(to_json(e)));
            return py::make_tuple(std::move(r.model), history);
        },
        py::arg("dataset"), py::arg("config") = py::none(), "Returns (model, per-epoch metrics).");

    m.def(
        "evaluate",
        [](const RewardModel& model, const Dataset& d, const std::string& split) {
            return to_py(to_json(evaluate(model, d, split_arg(split))));
        },
        py::arg("model"), py::arg("dataset"), py::arg("split") = "validation");

    m.def(
        "verify",
        [](std::uint64_t seed, bool quick) {
            std::vector<SuiteResult> r;
            {
                py::gil_scoped_release release;
                r = verify_all(seed, quick);
            }
            py::list out;
            for (const SuiteResult& s : r)
                out.append(to_py(to_json(s)));
            return out;
        },
        py::arg("seed") = 1, py::arg("quick") = true);
}
