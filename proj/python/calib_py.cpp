#include "calib/cfm.hpp"
#include "calib/cli_io.hpp"
#include "calib/datagen.hpp"
#include "calib/dde_core.hpp"
#include "calib/ddl.hpp"
#include "calib/error.hpp"
#include "calib/metrics.hpp"
#include "calib/regression.hpp"

#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace calib;

namespace {

SolverConfig solver_with(double step_h, double horizon_h) {
    SolverConfig s;
    s.step_h = step_h;
    s.horizon_h = horizon_h;
    return s;
}

py::dict fit_dict(const FitResult& f) {
    py::dict d;
    d["params"] = f.params;
    d["sse"] = f.sse;
    d["n_starts"] = f.n_starts;
    d["n_simulations"] = f.n_simulations;
    d["converged"] = f.converged;
    return d;
}

} // namespace

PYBIND11_MODULE(_calib, m) {
    m.doc() = "Batch fermentation kinetics with a substrate delay: simulation, regression and learned inverse models.";
    m.attr("__version__") = kToolVersion;

    py::register_exception<Error>(m, "CalibError", PyExc_RuntimeError);

    py::class_<KineticParams>(m, "KineticParams")
        .def(py::init<>())
        .def(py::init([](const std::vector<double>& v) { return KineticParams::from_array(v); }), py::arg("values"))
        .def_readwrite("k_d", &KineticParams::k_d)
        .def_readwrite("mu_m", &KineticParams::mu_m)
        .def_readwrite("K_S", &KineticParams::K_S)
        .def_readwrite("Y_inv", &KineticParams::Y_XS_inv)
        .def_readwrite("k_p", &KineticParams::k_p)
        .def_readwrite("tau_S", &KineticParams::tau_S)
        .def_readwrite("K_PS", &KineticParams::K_PS)
        .def_readwrite("K_X", &KineticParams::K_X)
        .def("to_list", [](const KineticParams& p) {
            const auto a = p.to_array();
            return std::vector<double>(a.begin(), a.end());
        })
        .def(py::self == py::self)
        .def("__repr__", [](const KineticParams& p) {
            std::string s = "KineticParams(";
            const auto a = p.to_array();
            for (std::size_t k = 0; k < a.size(); ++k) {
                s += (k ? ", " : "") + param_names()[k] + "=" + py::repr(py::float_(a[k])).cast<std::string>();
            }
            return s + ")";
        });
    m.attr("PARAM_NAMES") = param_names();

    py::class_<ParamBounds>(m, "ParamBounds")
        .def(py::init(&ParamBounds::defaults))
        .def_readwrite("lower", &ParamBounds::lower)
        .def_readwrite("upper", &ParamBounds::upper)
        .def("contains", &ParamBounds::contains)
        .def("midpoint", &ParamBounds::midpoint)
        .def("clip", &ParamBounds::clip);

    py::class_<ObservationSeries>(m, "ObservationSeries")
        .def(py::init<>())
        .def(py::init([](std::vector<double> t, std::vector<double> X, std::vector<double> S, std::vector<double> P) {
                 ObservationSeries s{std::move(t), std::move(X), std::move(S), std::move(P)};
                 if (!s.X.empty()) s.x0 = s.X.front();
                 if (!s.S.empty()) s.s0 = s.S.front();
                 s.validate();
                 return s;
             }),
             py::arg("times"), py::arg("X"), py::arg("S"), py::arg("P"))
        .def_readwrite("times", &ObservationSeries::times)
        .def_readwrite("X", &ObservationSeries::X)
        .def_readwrite("S", &ObservationSeries::S)
        .def_readwrite("P", &ObservationSeries::P)
        .def_readwrite("x0", &ObservationSeries::x0)
        .def_readwrite("s0", &ObservationSeries::s0)
        .def("__len__", &ObservationSeries::size);

    m.def(
        "simulate",
        [](const KineticParams& p, double x0, double s0, const std::vector<double>& times, double step_h,
           double horizon_h) {
            const Trajectory t = simulate(p, {x0, s0, 0.0}, times, solver_with(step_h, horizon_h));
            ObservationSeries s = ObservationSeries::from_trajectory(t);
            return s;
        },
        py::arg("params"), py::arg("x0"), py::arg("s0"), py::arg("times"), py::arg("step_h") = 0.05,
        py::arg("horizon_h") = 140.0, "Integrate from (x0, s0, 0) and sample at `times`.");

    m.def("uniform_times", &uniform_times, py::arg("horizon_h"), py::arg("dt"));

    m.def(
        "generate_samples",
        [](std::size_t n, std::uint64_t seed) {
            DatasetConfig c;
            c.n_total = n;
            c.n_train = 0;
            c.n_test = n;
            c.seed = seed;
            std::vector<std::pair<KineticParams, ObservationSeries>> out;
            for (auto& s : generate_dataset(c).test) out.emplace_back(s.params, std::move(s.observation));
            return out;
        },
        py::arg("n"), py::arg("seed") = 42, "Draw n (params, series) pairs with the default generator settings.");

    m.def(
        "nrmse", [](const std::vector<double>& y, const std::vector<double>& y_hat) { return nrmse(y, y_hat); },
        py::arg("y"), py::arg("y_hat"));
    m.def(
        "trajectory_nrmse",
        [](const KineticParams& p, const ObservationSeries& s) {
            const auto t = trajectory_nrmse(p, s);
            return py::make_tuple(t.X, t.S, t.P);
        },
        py::arg("params"), py::arg("series"));

    m.def(
        "fit",
        [](const ObservationSeries& s, std::size_t n_starts, std::uint64_t seed, std::size_t budget) {
            FitOptions o;
            o.budget = budget;
            FitResult f;
            {
                py::gil_scoped_release release;
                f = fit_multistart(s, ParamBounds::defaults(), SseWeights::normalizing(s), n_starts, seed, o);
            }
            return fit_dict(f);
        },
        py::arg("series"), py::arg("n_starts") = 8, py::arg("seed") = 1, py::arg("budget") = 125,
        "Multistart bounded least squares; returns a dict with params, sse and counts.");

    m.def(
        "load_experiment",
        [](const std::filesystem::path& path, std::optional<double> od_factor) {
            const ExperimentRecord r = load_experiment_csv(path, od_factor);
            py::dict d;
            d["label"] = r.label;
            d["series"] = r.series;
            d["volume_L"] = r.volume_L;
            d["aeration_vvm"] = r.aeration_vvm;
            d["agitation_rpm"] = r.agitation_rpm;
            d["od_factor"] = r.od_factor;
            return d;
        },
        py::arg("path"), py::arg("od_factor") = py::none());

    py::class_<DdlModel>(m, "DdlModel")
        .def_static("load", &load_ddl_model, py::arg("path"))
        .def("save", [](const DdlModel& d, const std::filesystem::path& p) { save_ddl_model(d, p); })
        .def("predict", [](const DdlModel& d, const ObservationSeries& s) { return predict_params(d, s).params; });

    py::class_<VelocityModel>(m, "CfmModel")
        .def_static("load", &load_cfm_model, py::arg("path"))
        .def("save", [](const VelocityModel& v, const std::filesystem::path& p) { save_cfm_model(v, p); })
        .def(
            "sample",
            [](const VelocityModel& v, const ObservationSeries& s, int n_samples, int n_steps, std::uint64_t seed) {
                return sample_posterior(v, s, {n_samples, n_steps, seed}).samples;
            },
            py::arg("series"), py::arg("n_samples") = 256, py::arg("n_steps") = 100, py::arg("seed") = 0)
        .def(
            "predict",
            [](const VelocityModel& v, const ObservationSeries& s, int n_samples, int n_steps, std::uint64_t seed) {
                return point_estimate(sample_posterior(v, s, {n_samples, n_steps, seed}), v.bounds);
            },
            py::arg("series"), py::arg("n_samples") = 256, py::arg("n_steps") = 100, py::arg("seed") = 0);

    m.def(
        "run",
        [](const std::string& command, const std::filesystem::path& config, std::optional<std::uint64_t> seed,
           std::optional<std::filesystem::path> out) {
            RunConfig c = RunConfig::load(config);
            if (seed) c.set("seed", std::to_string(*seed));
            if (out) c.set("out_dir", std::filesystem::absolute(*out).string());
            const PipelineSettings s = settings_from_config(c);
            py::gil_scoped_release release;
            run_pipeline(s, command_from_string(command));
            return s.out_dir;
        },
        py::arg("command"), py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none(),
        "Run one pipeline command; returns the output directory.");
}
