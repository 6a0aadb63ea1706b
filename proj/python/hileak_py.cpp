#include "hileak/combiner.hpp"
#include "hileak/error.hpp"
#include "hileak/experiment.hpp"
#include "hileak/pipeline.hpp"
#include "hileak/rewriter.hpp"
#include "hileak/stats.hpp"

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

namespace py = pybind11;
using namespace hileak;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

TraceSet to_traceset(const FloatArray &traces, const LabelArray &labels) {
    if (traces.ndim() != 2)
        throw std::invalid_argument("traces must be a 2-D array (traces x samples)");
    if (labels.ndim() != 1 || labels.shape(0) != traces.shape(0))
        throw std::invalid_argument("labels must be 1-D with one entry per trace");
    TraceSet set(static_cast<std::size_t>(traces.shape(0)), static_cast<std::size_t>(traces.shape(1)));
    std::memcpy(set.samples.data(), traces.data(), set.samples.size() * sizeof(float));
    const std::uint8_t *l = labels.data();
    for (std::size_t i = 0; i < set.n_traces; ++i) {
        if (l[i] > 1)
            throw std::invalid_argument("labels must be 0 (fixed) or 1 (random)");
        set.labels[i] = static_cast<TraceClass>(l[i]);
    }
    return set;
}

py::tuple from_traceset(const TraceSet &set) {
    FloatArray traces({set.n_traces, set.n_samples});
    std::memcpy(traces.mutable_data(), set.samples.data(), set.samples.size() * sizeof(float));
    LabelArray labels(std::vector<py::ssize_t>{static_cast<py::ssize_t>(set.n_traces)});
    auto *l = labels.mutable_data();
    for (std::size_t i = 0; i < set.n_traces; ++i)
        l[i] = static_cast<std::uint8_t>(set.labels[i]);
    return py::make_tuple(traces, labels);
}

py::object json_to_py(const nlohmann::json &j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict analysis_dict(const AnalysisResult &r) {
    py::list leaks;
    for (const auto &l : r.leaks) {
        auto v = l.index.view();
        leaks.append(py::make_tuple(py::tuple(py::cast(std::vector<std::uint32_t>(v.begin(), v.end()))), l.t_value));
    }
    py::dict d;
    d["order"] = r.heatmap.order;
    d["threshold"] = r.threshold;
    d["threshold_applied"] = r.threshold_applied;
    d["dof"] = r.dof_used;
    d["n_indices"] = r.n_indices;
    d["leaks"] = leaks;
    if (r.heatmap.order == 2) {
        const std::size_t m = r.heatmap.n_samples;
        py::array_t<double> heat({m, m});
        std::memcpy(heat.mutable_data(), r.heatmap.dense.data(), m * m * sizeof(double));
        d["heatmap"] = heat;
    }
    return d;
}

CombinerConfig combiner(int order, std::size_t window, double alpha, unsigned threads) {
    CombinerConfig c;
    c.order = order;
    c.window = window;
    c.alpha = alpha;
    c.threads = threads;
    return c;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Higher-order leakage detection and fixing for masked Thumb assembly";

    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<ExecutionError>(m, "ExecutionError", PyExc_RuntimeError);

    py::class_<Program>(m, "Program")
        .def("__len__", &Program::size)
        .def("emit", &emit_program, "Assembly text of the program")
        .def("cycles", [](const Program &p) { return cycles(p); }, "Cost under the default cycle table")
        .def("__eq__", [](const Program &a, const Program &b) { return a == b; });

    py::class_<LeakageModel>(m, "LeakageModel")
        .def_readonly("name", &LeakageModel::name)
        .def_readonly("coefficients", &LeakageModel::coefficients)
        .def("names", &LeakageModel::names)
        .def("__len__", &LeakageModel::size);

    m.def(
        "parse_program",
        [](const std::string &text, std::size_t padding) {
            ParseOptions o;
            o.padding_length = padding;
            return parse_program(text, o);
        },
        py::arg("text"), py::arg("padding") = 9);
    m.def(
        "load_program",
        [](const std::string &path, std::size_t padding) {
            ParseOptions o;
            o.padding_length = padding;
            return load_program(path, o);
        },
        py::arg("path"), py::arg("padding") = 9);
    m.def("default_model", &default_model);
    m.def("load_model", [](const std::string &path) { return load_model(path); }, py::arg("path"));

    m.def(
        "emulate",
        [](const Program &kernel, std::size_t traces, std::uint64_t seed, double noise_sigma_pct, bool all_random,
           const LeakageModel *model, unsigned threads) {
            ExperimentSpec spec;
            spec.kernel = kernel;
            spec.n_traces = traces;
            spec.seed = seed;
            spec.noise_sigma_pct = noise_sigma_pct;
            spec.mode = all_random ? InputMode::AllRandom : InputMode::FixedVsRandom;
            spec.record_components = false;
            spec.threads = threads;
            ExperimentResult r;
            {
                py::gil_scoped_release release;
                r = run_experiment(spec, model ? *model : default_model());
            }
            return from_traceset(r.traces);
        },
        py::arg("kernel"), py::arg("traces"), py::arg("seed") = 0, py::arg("noise_sigma_pct") = 0.0,
        py::arg("all_random") = false, py::arg("model") = nullptr, py::arg("threads") = 0,
        "Emulated traces (float32, traces x samples) and labels (0 fixed, 1 random)");

    m.def(
        "analyze",
        [](const FloatArray &traces, const LabelArray &labels, int order, std::size_t window, double alpha,
           unsigned threads) {
            TraceSet set = to_traceset(traces, labels);
            AnalysisResult r;
            {
                py::gil_scoped_release release;
                r = multivariate_ttest(set, combiner(order, window, alpha, threads));
            }
            return analysis_dict(r);
        },
        py::arg("traces"), py::arg("labels"), py::arg("order") = 2, py::arg("window") = 50, py::arg("alpha") = 1e-5,
        py::arg("threads") = 0);

    m.def("corrected_threshold", &corrected_threshold, py::arg("n_comparisons"), py::arg("alpha"), py::arg("dof"));
    m.def(
        "welch_t",
        [](const std::vector<double> &a, const std::vector<double> &b) {
            const WelchResult w = welch_t(moments_of(a), moments_of(b));
            return py::make_tuple(w.t, w.dof);
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "run",
        [](const Program &kernel, const std::vector<std::size_t> &schedule, double noise_sigma_pct,
           std::uint64_t seed, int order, std::size_t window, std::size_t rootcause_traces,
           std::size_t max_iterations, const LeakageModel *model, unsigned threads, const std::string &name,
           const std::string &out_dir) {
            PipelineConfig cfg;
            cfg.schedule = schedule;
            cfg.noise_sigma_pct = noise_sigma_pct;
            cfg.seed = seed;
            cfg.combiner.order = order;
            cfg.combiner.window = window;
            cfg.rootcause_traces = rootcause_traces;
            cfg.max_iterations = max_iterations;
            cfg.threads = threads;
            const LeakageModel mdl = model ? *model : default_model();
            RunResult run;
            nlohmann::json report;
            {
                py::gil_scoped_release release;
                run = run_loop(kernel, mdl, cfg);
                const ReportInputs in{&run, &mdl, &cfg, name};
                report = report_json(in);
                if (!out_dir.empty())
                    write_report(in, out_dir);
            }
            return py::make_tuple(run.final_program, json_to_py(report));
        },
        py::arg("kernel"), py::arg("schedule"), py::arg("noise_sigma_pct") = 0.25, py::arg("seed") = 0,
        py::arg("order") = 2, py::arg("window") = 50, py::arg("rootcause_traces") = 200000,
        py::arg("max_iterations") = 20, py::arg("model") = nullptr, py::arg("threads") = 0,
        py::arg("name") = std::string("kernel"), py::arg("out_dir") = std::string(),
        "Detect, root-cause and fix; returns the fixed program and the report as a dict");

    m.def(
        "overhead_table",
        [](const Program &before, const Program &after, const std::string &name) {
            return overhead_table({overhead(before, after, CycleTable{}, name)});
        },
        py::arg("before"), py::arg("after"), py::arg("name") = std::string("kernel"));
}
