#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "bhdetect/bhmm.hpp"
#include "bhdetect/cli.hpp"
#include "bhdetect/detector.hpp"
#include "bhdetect/evaluation.hpp"
#include "bhdetect/fixtures.hpp"
#include "bhdetect/netsim.hpp"

namespace py = pybind11;
using namespace bhdetect;

namespace {

py::dict dataset_dict(const TelemetryDataset& ds) {
    py::dict d;
    d["timestamps"] = ds.timestamps;
    d["columns"] = ds.columns;
    d["values"] = ds.values;
    d["period_s"] = ds.period_s;
    return d;
}

TelemetryDataset dataset_from(std::vector<std::int64_t> timestamps, std::vector<std::string> columns, Matrix values,
                              std::int64_t period_s) {
    TelemetryDataset ds;
    ds.timestamps = std::move(timestamps);
    ds.columns = std::move(columns);
    ds.values = std::move(values);
    ds.period_s = period_s;
    ds.node_of_column = infer_nodes(ds.columns);
    ds.validate();
    return ds;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Black-hole detection toolkit: native core";

    auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", error.ptr());

    m.def(
        "dbscan",
        [](const Matrix& points, double eps, std::size_t min_pts) { return dbscan(points, {eps, min_pts}).labels; },
        py::arg("points"), py::arg("eps"), py::arg("min_pts"),
        "Cluster labels per row; -1 marks noise.");

    m.def(
        "silhouette_score",
        [](const Matrix& points, const std::vector<int>& labels) { return silhouette_score(points, labels); },
        py::arg("points"), py::arg("labels"));

    m.def(
        "davies_bouldin_score",
        [](const Matrix& points, const std::vector<int>& labels) { return davies_bouldin_score(points, labels); },
        py::arg("points"), py::arg("labels"));

    m.def(
        "split_indices",
        [](std::size_t n, double train_fraction, double validation_fraction, const std::string& mode,
           std::uint64_t seed) {
            SplitSpec spec;
            spec.train_fraction = train_fraction;
            spec.validation_fraction_of_total = validation_fraction;
            spec.mode = parse_split_mode(mode);
            const auto s = split_indices(n, spec, seed);
            py::dict d;
            d["train"] = s.train;
            d["validation"] = s.validation;
            d["test"] = s.test;
            return d;
        },
        py::arg("n"), py::arg("train_fraction") = 0.70, py::arg("validation_fraction") = 0.15,
        py::arg("mode") = "chronological", py::arg("seed") = 0);

    m.def(
        "make_redundancy_fixture",
        [](std::uint64_t seed, std::size_t rows) { return dataset_dict(make_redundancy_fixture(seed, rows)); },
        py::arg("seed") = 1, py::arg("rows") = kBenchmarkRows);

    m.def(
        "bhmm",
        [](std::vector<std::int64_t> timestamps, std::vector<std::string> columns, Matrix values,
           std::int64_t period_s, double sparse_threshold, double corr_threshold) {
            const auto ds = dataset_from(std::move(timestamps), std::move(columns), std::move(values), period_s);
            const auto r = run_bhmm_pipeline(ds, {sparse_threshold, corr_threshold});
            py::dict d;
            d["columns"] = r.matrix.column_names;
            d["values"] = r.matrix.values;
            d["report_json"] = r.report.to_json().dump();
            return d;
        },
        py::arg("timestamps"), py::arg("columns"), py::arg("values"), py::arg("period_s") = 300,
        py::arg("sparse_threshold") = 0.95, py::arg("corr_threshold") = 0.9);

    m.def(
        "simulate_scenario",
        [](const std::filesystem::path& path, std::optional<std::uint64_t> seed) {
            Scenario sc = load_scenario(path);
            if (seed) sc.reseed(*seed);
            const SimState st = sc.state();
            const SimOutput o = simulate(st.topology, st.flows, st.events, st.config);
            py::dict d = dataset_dict(o.telemetry);
            py::list events;
            for (const auto& e : o.events) events.append(py::make_tuple(e.node, e.start_s, e.duration_s));
            d["events"] = events;
            d["label_nodes"] = o.telemetry.labels->nodes;
            d["labels"] = o.telemetry.labels->values;
            return d;
        },
        py::arg("path"), py::arg("seed") = py::none());

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs one CLI command in-process; returns (exit_code, stdout, stderr).");
}
