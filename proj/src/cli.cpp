#include "bhdetect/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "bhdetect/csv.hpp"
#include "bhdetect/hash.hpp"
#include "bhdetect/telemetry_schema.hpp"

namespace bhdetect {

namespace fs = std::filesystem;
using json = nlohmann::json;

// --- experiment configuration ----------------------------------------------

TuningGrid default_tuning_grid() {
    TuningGrid g;
    g.eps = {1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0};
    g.min_pts = {10, 20, 40, 80};
    g.rounds = 3;
    g.max_noise_fraction = 0.15;
    return g;
}

ExperimentConfig::ExperimentConfig() : grid(default_tuning_grid()) {}

void ExperimentConfig::validate() const {
    grid.validate();
    split.validate();
    if (!(bhmm.sparse_threshold > 0.0 && bhmm.sparse_threshold <= 1.0))
        throw ConfigError("sparse threshold must lie in (0, 1]");
    if (!(bhmm.corr_threshold > 0.0 && bhmm.corr_threshold < 1.0))
        throw ConfigError("correlation threshold must lie in (0, 1)");
}

namespace {

BhmmScope parse_scope(std::string_view s) {
    if (s == "global") return BhmmScope::global;
    if (s == "per_node") return BhmmScope::per_node;
    throw ConfigError("bhmm scope must be global or per_node");
}

std::string_view to_string(BhmmScope s) { return s == BhmmScope::global ? "global" : "per_node"; }

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, std::string_view where) {
    for (const auto& [k, _] : j.items())
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw ConfigError("unknown key '" + k + "' in " + std::string(where));
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    try {
        reject_unknown(j, {"scenario", "out", "seed", "nodes", "bhmm", "detector", "split", "mitigation"},
                       "experiment config");
        ExperimentConfig c;
        if (j.contains("scenario")) {
            const fs::path p = j.at("scenario").get<std::string>();
            c.scenario = p.is_absolute() ? p : base_dir / p;
        }
        if (j.contains("out")) c.out = j.at("out").get<std::string>();
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        c.nodes = j.value("nodes", c.nodes);
        if (j.contains("bhmm")) {
            const auto& b = j.at("bhmm");
            reject_unknown(b, {"sparse_threshold", "corr_threshold", "scope"}, "bhmm");
            c.bhmm.sparse_threshold = b.value("sparse_threshold", c.bhmm.sparse_threshold);
            c.bhmm.corr_threshold = b.value("corr_threshold", c.bhmm.corr_threshold);
            c.bhmm_scope = parse_scope(b.value("scope", std::string(to_string(c.bhmm_scope))));
        }
        if (j.contains("detector")) {
            const auto& d = j.at("detector");
            reject_unknown(d, {"mode", "eps", "min_pts", "rounds", "max_noise_fraction"}, "detector");
            c.mode = parse_detect_mode(d.value("mode", std::string(to_string(c.mode))));
            c.grid.eps = d.value("eps", c.grid.eps);
            c.grid.min_pts = d.value("min_pts", c.grid.min_pts);
            c.grid.rounds = d.value("rounds", c.grid.rounds);
            c.grid.max_noise_fraction = d.value("max_noise_fraction", c.grid.max_noise_fraction);
        }
        if (j.contains("split")) {
            const auto& s = j.at("split");
            reject_unknown(s, {"train_fraction", "validation_fraction_of_total", "mode"}, "split");
            c.split.train_fraction = s.value("train_fraction", c.split.train_fraction);
            c.split.validation_fraction_of_total =
                s.value("validation_fraction_of_total", c.split.validation_fraction_of_total);
            c.split.mode = parse_split_mode(s.value("mode", std::string(to_string(c.split.mode))));
        }
        if (j.contains("mitigation")) c.mitigation = parse_mitigation(j.at("mitigation").get<std::string>());
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid experiment config: ") + e.what());
    }
}

json ExperimentConfig::to_json() const {
    json j;
    if (!scenario.empty()) j["scenario"] = scenario.generic_string();
    if (!out.empty()) j["out"] = out.generic_string();
    if (seed) j["seed"] = *seed;
    j["nodes"] = nodes;
    j["bhmm"] = {{"sparse_threshold", bhmm.sparse_threshold},
                 {"corr_threshold", bhmm.corr_threshold},
                 {"scope", to_string(bhmm_scope)}};
    j["detector"] = {{"mode", to_string(mode)},
                     {"eps", grid.eps},
                     {"min_pts", grid.min_pts},
                     {"rounds", grid.rounds},
                     {"max_noise_fraction", grid.max_noise_fraction}};
    j["split"] = {{"train_fraction", split.train_fraction},
                  {"validation_fraction_of_total", split.validation_fraction_of_total},
                  {"mode", to_string(split.mode)}};
    j["mitigation"] = to_string(mitigation);
    return j;
}

ExperimentConfig load_experiment(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open experiment config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("experiment config " + path.string() + " is not valid JSON: " + e.what());
    }
    return ExperimentConfig::from_json(j, path.parent_path());
}

// --- command plumbing ------------------------------------------------------

namespace {

struct Options {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> period;
    // simulate
    std::string scenario;
    // ingest / bhmm / tune / detect
    std::string input;
    // bhmm
    std::optional<double> sparse_threshold;
    std::optional<double> corr_threshold;
    std::string scope;
    // tune
    std::vector<double> grid_eps;
    std::vector<std::size_t> grid_min_pts;
    // detect
    std::optional<double> eps;
    std::optional<std::size_t> min_pts;
    std::string mode;
    // evaluate
    bool paired = false;
};

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("missing artifact: " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(path.string() + " is not valid JSON: " + e.what());
    }
}

class Run {
public:
    Run(const Options& opt, std::string stage, std::ostream& log) : stage_(std::move(stage)), log_(log) {
        if (!opt.config.empty()) {
            cfg = load_experiment(opt.config);
            config_sha_ = sha256_file(opt.config);
        }
        out = !opt.out.empty() ? fs::path(opt.out) : cfg.out;
        if (out.empty()) throw ConfigError("no output directory: pass --out or set \"out\" in the config");
        fs::create_directories(out);
        if (fs::exists(path("manifest.json"))) manifest_ = read_json(path("manifest.json"));
        if (!manifest_.is_object()) manifest_ = json::object();

        if (opt.seed)
            seed_ = opt.seed;
        else if (cfg.seed)
            seed_ = cfg.seed;
        else if (manifest_.contains("seed"))
            seed_ = manifest_.at("seed").get<std::uint64_t>();

        if (opt.period)
            period = *opt.period;
        else if (manifest_.contains("period_s"))
            period = manifest_.at("period_s").get<std::int64_t>();
        if (period <= 0) throw ConfigError("period must be positive");
    }

    fs::path path(const std::string& name) const { return out / name; }

    fs::path require(const std::string& name) const {
        const fs::path p = path(name);
        if (!fs::exists(p)) throw Error("missing artifact: " + p.string());
        return p;
    }

    fs::path input_or(const std::string& explicit_path, const std::string& name) const {
        if (explicit_path.empty()) return require(name);
        if (!fs::exists(explicit_path)) throw Error("missing artifact: " + explicit_path);
        return explicit_path;
    }

    std::optional<std::uint64_t> seed() const { return seed_; }
    std::uint64_t seed_or_zero() const { return seed_.value_or(0); }
    void set_seed(std::uint64_t s) { seed_ = s; }

    void input(const fs::path& p) { inputs_[p.filename().string()] = sha256_file(p); }
    void output(const std::string& name) { outputs_.push_back({name, false}); }
    void volatile_output(const std::string& name) { outputs_.push_back({name, true}); }
    void param(const std::string& key, json value) { params_[key] = std::move(value); }
    void set_manifest(const std::string& key, json value) { manifest_[key] = std::move(value); }

    void commit() {
        json& arts = manifest_["artifacts"];
        if (!arts.is_object()) arts = json::object();
        json names = json::array();
        for (const auto& [name, vol] : outputs_) {
            const fs::path p = path(name);
            if (vol)
                arts[name] = {{"stage", stage_}, {"volatile", true}};
            else
                arts[name] = {{"stage", stage_}, {"sha256", sha256_file(p)}, {"bytes", fs::file_size(p)}};
            names.push_back(name);
        }
        json st = {{"outputs", names}, {"inputs", inputs_}, {"params", params_}};
        if (!config_sha_.empty()) st["config_sha256"] = config_sha_;
        manifest_["stages"][stage_] = std::move(st);
        if (seed_) manifest_["seed"] = *seed_;
        manifest_["period_s"] = period;
        manifest_["tool"] = "bhdetect";
        write_json(path("manifest.json"), manifest_);
    }

    std::ostream& log() { return log_; }

    ExperimentConfig cfg;
    fs::path out;
    std::int64_t period = 300;

private:
    std::string stage_;
    std::ostream& log_;
    std::string config_sha_;
    std::optional<std::uint64_t> seed_;
    json manifest_;
    json inputs_ = json::object();
    json params_ = json::object();
    std::vector<std::pair<std::string, bool>> outputs_;
};

TelemetryDataset read_telemetry(const fs::path& p, std::int64_t period) {
    auto r = ingest_csv(p, period);
    return std::move(r.dataset);
}

Scenario scenario_for(const Run& run, const Options& opt) {
    const fs::path p = !opt.scenario.empty() ? fs::path(opt.scenario) : run.cfg.scenario;
    if (p.empty()) throw ConfigError("no scenario: pass --scenario or set \"scenario\" in the config");
    Scenario s = load_scenario(p);
    if (run.seed()) s.reseed(*run.seed());
    return s;
}

/// Nodes to model: the configured list, else every router with columns.
std::vector<std::string> nodes_for(const ExperimentConfig& cfg, std::span<const std::string> node_of_column) {
    if (!cfg.nodes.empty()) return cfg.nodes;
    std::set<std::string> s;
    for (const auto& n : node_of_column)
        if (!n.empty()) s.insert(n);
    if (s.empty()) throw Error("no router-scoped columns in the input");
    return {s.begin(), s.end()};
}

json split_json(const SplitSpec& spec, const SplitIndices& idx) {
    return {{"mode", to_string(spec.mode)},
            {"train", idx.train.size()},
            {"validation", idx.validation.size()},
            {"test", idx.test.size()}};
}

/// Per-node BHMM outputs side by side: each node's own columns in node
/// order, then one copy of the temporal columns.
FeatureMatrix concat_node_matrices(const std::vector<std::string>& nodes,
                                   const std::map<std::string, FeatureMatrix>& parts) {
    std::vector<const FeatureMatrix*> srcs;
    std::vector<std::size_t> cols;
    FeatureMatrix out;
    out.timestamps = parts.at(nodes.front()).timestamps;
    auto take = [&](const FeatureMatrix& m, std::size_t j) {
        srcs.push_back(&m);
        cols.push_back(j);
        out.column_names.push_back(m.column_names[j]);
        out.provenance.push_back(m.provenance[j]);
        out.node_of_column.push_back(m.node_of_column[j]);
    };
    for (const auto& n : nodes) {
        const FeatureMatrix& m = parts.at(n);
        for (std::size_t j = 0; j < m.cols(); ++j)
            if (m.provenance[j] != Provenance::temporal) take(m, j);
    }
    const FeatureMatrix& first = parts.at(nodes.front());
    for (std::size_t j = 0; j < first.cols(); ++j)
        if (first.provenance[j] == Provenance::temporal) take(first, j);
    out.values.resize(static_cast<Eigen::Index>(out.rows()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k)
        out.values.col(static_cast<Eigen::Index>(k)) = srcs[k]->values.col(static_cast<Eigen::Index>(cols[k]));
    out.validate();
    return out;
}

// --- commands --------------------------------------------------------------

int cmd_simulate(const Options& opt, std::ostream& log) {
    Run run(opt, "simulate", log);
    Scenario s = scenario_for(run, opt);
    run.set_seed(s.config.seed);
    run.period = s.config.period_s;
    const SimState st = s.state();
    const SimOutput o = simulate(st.topology, st.flows, st.events, st.config);

    write_telemetry_csv(o.telemetry, run.path("telemetry.csv"));
    write_labels_csv(*o.telemetry.labels, run.path("labels.csv"));
    write_delivery_csv(o.delivery, run.path("delivery.csv"));
    write_events_csv(o.events, run.path("events.csv"));
    for (const char* name : {"telemetry.csv", "labels.csv", "delivery.csv", "events.csv"}) run.output(name);
    run.param("scenario_sha256", sha256_hex(s.to_json().dump()));
    run.commit();
    log << "simulate: " << o.telemetry.rows() << " rows x " << o.telemetry.cols() << " columns, "
        << o.events.size() << " events -> " << run.out.string() << '\n';
    return 0;
}

int cmd_ingest(const Options& opt, std::ostream& log) {
    Run run(opt, "ingest", log);
    if (opt.input.empty()) throw ConfigError("ingest needs --input");
    const fs::path in = run.input_or(opt.input, "");
    const IngestResult r = ingest_csv(in, run.period);
    write_telemetry_csv(r.dataset, run.path("ingested.csv"));
    write_json(run.path("ingest_log.json"), {{"rows", r.dataset.rows()},
                                             {"columns", r.dataset.cols()},
                                             {"filled_timestamps", r.filled_timestamps},
                                             {"log", r.log}});
    run.input(in);
    run.output("ingested.csv");
    run.output("ingest_log.json");
    run.commit();
    log << "ingest: " << r.dataset.rows() << " rows (" << r.filled_timestamps.size() << " filled)\n";
    return 0;
}

int cmd_bhmm(const Options& opt, std::ostream& log) {
    Run run(opt, "bhmm", log);
    BhmmParams params = run.cfg.bhmm;
    if (opt.sparse_threshold) params.sparse_threshold = *opt.sparse_threshold;
    if (opt.corr_threshold) params.corr_threshold = *opt.corr_threshold;
    // Without an experiment config the whole input is one matrix.
    BhmmScope scope = opt.config.empty() ? BhmmScope::global : run.cfg.bhmm_scope;
    if (!opt.scope.empty()) scope = parse_scope(opt.scope);

    const fs::path in = run.input_or(opt.input, "telemetry.csv");
    const TelemetryDataset ds = read_telemetry(in, run.period);

    FeatureMatrix matrix;
    json report;
    if (scope == BhmmScope::global) {
        auto r = run_bhmm_pipeline(ds, params);
        matrix = std::move(r.matrix);
        report = {{"scope", "global"}, {"report", r.report.to_json()}};
    } else {
        const auto nodes = nodes_for(run.cfg, ds.node_of_column);
        std::map<std::string, BhmmReport> reports;
        const auto parts = node_feature_sets(ds, nodes, true, params, &reports);
        matrix = concat_node_matrices(nodes, parts);
        report = {{"scope", "per_node"}, {"nodes", json::object()}};
        for (const auto& [n, r] : reports) report["nodes"][n] = r.to_json();
    }
    report["final_column_count"] = matrix.cols();
    report["final_columns"] = matrix.column_names;

    write_telemetry_csv(matrix.to_dataset(run.period), run.path("bhmm_matrix.csv"));
    write_json(run.path("bhmm_report.json"), report);
    run.input(in);
    run.param("sparse_threshold", params.sparse_threshold);
    run.param("corr_threshold", params.corr_threshold);
    run.param("scope", to_string(scope));
    run.output("bhmm_matrix.csv");
    run.output("bhmm_report.json");
    run.commit();
    log << "bhmm: " << ds.cols() << " -> " << matrix.cols() << " columns (" << to_string(scope) << ")\n";
    return 0;
}

FeatureMatrix read_features(const fs::path& p, std::int64_t period) {
    return FeatureMatrix::from_dataset(read_telemetry(p, period));
}

int cmd_tune(const Options& opt, std::ostream& log) {
    Run run(opt, "tune", log);
    TuningGrid grid = run.cfg.grid;
    if (!opt.grid_eps.empty()) grid.eps = opt.grid_eps;
    if (!opt.grid_min_pts.empty()) grid.min_pts = opt.grid_min_pts;
    grid.validate();

    const fs::path in = run.input_or(opt.input, "bhmm_matrix.csv");
    const FeatureMatrix m = read_features(in, run.period);
    const SplitIndices split = split_indices(m.rows(), run.cfg.split, run.seed_or_zero());

    json nodes = json::object();
    for (const auto& node : nodes_for(run.cfg, m.node_of_column)) {
        const FeatureMatrix fm = m.select_columns(node_feature_columns(m, node));
        const NodeDetector det = fit_node_detector(fm, split, grid, node);
        nodes[node] = {{"features", det.columns}, {"tuning", det.tuning.to_json()}};
        log << "tune: " << node << " eps=" << format_double(det.tuning.selected.eps)
            << " min_pts=" << det.tuning.selected.min_pts << '\n';
    }
    const json grid_json = {{"eps", grid.eps},
                            {"min_pts", grid.min_pts},
                            {"rounds", grid.rounds},
                            {"max_noise_fraction", grid.max_noise_fraction}};
    write_json(run.path("tuning_report.json"),
               {{"grid", grid_json}, {"split", split_json(run.cfg.split, split)}, {"nodes", nodes}});
    run.input(in);
    run.param("grid", grid_json);
    run.output("tuning_report.json");
    run.commit();
    return 0;
}

int cmd_detect(const Options& opt, std::ostream& log) {
    Run run(opt, "detect", log);
    if (opt.eps.has_value() != opt.min_pts.has_value())
        throw ConfigError("--eps and --min-pts must be given together");
    const DetectMode mode = opt.mode.empty() ? run.cfg.mode : parse_detect_mode(opt.mode);
    std::optional<DbscanParams> explicit_params;
    if (opt.eps) {
        explicit_params = DbscanParams{*opt.eps, *opt.min_pts};
        explicit_params->validate();
    }
    if (mode == DetectMode::whole_matrix && !explicit_params)
        throw ConfigError("whole_matrix detection needs explicit --eps and --min-pts");

    const fs::path in = run.input_or(opt.input, "bhmm_matrix.csv");
    const FeatureMatrix m = read_features(in, run.period);
    const SplitIndices split = split_indices(m.rows(), run.cfg.split, run.seed_or_zero());
    const auto nodes = nodes_for(run.cfg, m.node_of_column);

    json tuned;
    if (!explicit_params) {
        const fs::path tp = run.require("tuning_report.json");
        tuned = read_json(tp).at("nodes");
        run.input(tp);
    }
    auto params_for = [&](const std::string& node) {
        if (explicit_params) return *explicit_params;
        if (!tuned.contains(node)) throw Error("tuning report has no entry for node '" + node + "'");
        const auto& sel = tuned.at(node).at("tuning").at("selected");
        return DbscanParams{sel.at("eps").get<double>(), sel.at("min_pts").get<std::size_t>()};
    };

    FlagTable flags(m.timestamps, nodes);
    json report = {{"mode", to_string(mode)}, {"rows", m.rows()}, {"nodes", json::object()}};
    if (mode == DetectMode::whole_matrix) {
        std::vector<std::size_t> cols;
        for (std::size_t j = 0; j < m.cols(); ++j)
            if (m.node_of_column[j].empty() ||
                std::find(nodes.begin(), nodes.end(), m.node_of_column[j]) != nodes.end())
                cols.push_back(j);
        const FeatureMatrix sub = m.select_columns(cols);
        const NodeDetector det = prepare_node_detector(sub, split);
        std::vector<std::size_t> keep;
        for (const auto& c : det.columns) keep.push_back(sub.column_index(c));
        DetectConfig dc;
        dc.mode = mode;
        dc.params = *explicit_params;
        dc.nodes = nodes;
        flags = detect_black_holes(det.standardizer.apply(sub.select_columns(keep)), dc);
        report["features"] = det.columns.size();
    } else {
        for (std::size_t n = 0; n < nodes.size(); ++n) {
            const std::string& node = nodes[n];
            const FeatureMatrix fm = m.select_columns(node_feature_columns(m, node));
            const NodeDetector det = prepare_node_detector(fm, split, node);
            std::vector<std::size_t> keep;
            for (const auto& c : det.columns) keep.push_back(fm.column_index(c));
            const FeatureMatrix z = det.standardizer.apply(fm.select_columns(keep));
            const DbscanParams p = params_for(node);
            if (mode == DetectMode::per_node) {
                const ClusterAssignment ca = dbscan(z.values, p);
                for (std::size_t t = 0; t < ca.labels.size(); ++t)
                    if (ca.labels[t] < 0) flags.set(t, n, true);
            } else {
                DetectConfig dc;
                dc.mode = mode;
                dc.params = p;
                dc.nodes = {node};
                const FlagTable f = detect_black_holes(z, dc);
                for (std::size_t t = 0; t < f.timestamps.size(); ++t) flags.set(t, n, f.at(t, 0));
            }
            report["nodes"][node] = {{"eps", p.eps},
                                     {"min_pts", p.min_pts},
                                     {"source", explicit_params ? "explicit" : "tuned"},
                                     {"features", det.columns.size()}};
        }
    }
    for (std::size_t n = 0; n < nodes.size(); ++n) report["nodes"][nodes[n]]["flagged"] = flags.count_true(n);

    write_labels_csv(flags, run.path("detections.csv"));
    write_json(run.path("detect_report.json"), report);
    run.input(in);
    run.param("mode", to_string(mode));
    if (explicit_params) run.param("explicit", {{"eps", explicit_params->eps}, {"min_pts", explicit_params->min_pts}});
    run.output("detections.csv");
    run.output("detect_report.json");
    run.commit();
    for (std::size_t n = 0; n < nodes.size(); ++n)
        log << "detect: " << nodes[n] << ' ' << flags.count_true(n) << " of " << m.rows() << " rows flagged\n";
    return 0;
}

int cmd_evaluate(const Options& opt, std::ostream& log) {
    Run run(opt, "evaluate", log);
    const fs::path labels_path = run.path("labels.csv");
    if (!fs::exists(labels_path)) throw Error("ground truth required: missing " + labels_path.string());
    const FlagTable truth = read_labels_csv(labels_path);
    run.input(labels_path);

    if (!opt.paired || fs::exists(run.path("detections.csv"))) {
        const fs::path det_path = run.require("detections.csv");
        const FlagTable pred = read_labels_csv(det_path);
        run.input(det_path);
        if (pred.timestamps != truth.timestamps) throw Error("detections and labels cover different timestamps");
        const SplitIndices split = split_indices(pred.timestamps.size(), run.cfg.split, run.seed_or_zero());
        const EvalReport rep =
            score_detections(select_flags(pred, split.test, pred.nodes), select_flags(truth, split.test, pred.nodes));
        write_json(run.path("eval_report.json"),
                   {{"scored", "test"}, {"split", split_json(run.cfg.split, split)}, {"metrics", rep.to_json()}});
        run.output("eval_report.json");
        log << "evaluate: accuracy " << format_double(rep.overall.accuracy) << ", f1_macro "
            << format_double(rep.overall.f1_macro) << ", recall " << format_double(rep.overall.recall) << '\n';

        const bool have_scenario = !opt.scenario.empty() || !run.cfg.scenario.empty();
        if (run.cfg.mitigation != MitigationMode::off && have_scenario) {
            const Scenario s = scenario_for(run, opt);
            SimState st = s.state();
            SimConfig off = st.config;
            off.mitigation = MitigationMode::off;
            const SimOutput without = simulate(st.topology, st.flows, st.events, off);
            st.config.mitigation = run.cfg.mitigation;
            const auto detections = detections_from_flags(pred);
            const SimOutput with = apply_mitigation(st, detections);
            const PdrComparison pdr = pdr_gain(without, with);
            write_json(run.path("pdr_report.json"), {{"mitigation", to_string(run.cfg.mitigation)},
                                                     {"detections", detections.size()},
                                                     {"comparison", pdr.to_json()}});
            run.output("pdr_report.json");
            log << "evaluate: mean PDR gain " << format_double(pdr.mean_gain) << " over " << pdr.windows.size()
                << " event windows\n";
        }
    }

    if (opt.paired) {
        const fs::path tel = run.require("telemetry.csv");
        TelemetryDataset ds = read_telemetry(tel, run.period);
        if (ds.timestamps != truth.timestamps) throw Error("labels and telemetry cover different timestamps");
        ds.labels = truth;
        run.input(tel);
        CompareConfig cc;
        cc.nodes = run.cfg.nodes;
        cc.split = run.cfg.split;
        cc.seed = run.seed_or_zero();
        cc.grid = run.cfg.grid;
        cc.bhmm = run.cfg.bhmm;
        const BhmmComparison cmp = compare_bhmm(ds, cc);
        write_json(run.path("paired_report.json"), cmp.to_json());
        write_json(run.path("timing.json"), cmp.timing_json());
        run.output("paired_report.json");
        run.volatile_output("timing.json");
        const auto& w = cmp.with_bhmm.eval.overall;
        const auto& wo = cmp.without_bhmm.eval.overall;
        log << "evaluate --paired: accuracy " << format_double(w.accuracy) << " vs " << format_double(wo.accuracy)
            << ", f1_macro " << format_double(w.f1_macro) << " vs " << format_double(wo.f1_macro) << ", recall "
            << format_double(w.recall) << " vs " << format_double(wo.recall) << " (with vs without BHMM)\n";
    }
    run.param("paired", opt.paired);
    run.commit();
    return 0;
}

struct ReportRows {
    std::vector<std::vector<std::string>> rows;

    void add(const std::string& metric, const std::string& variant, const std::string& node, double v) {
        rows.push_back({metric, variant, node, format_double(v)});
    }
    void metrics(const json& m, const std::string& variant, const std::string& node) {
        for (const char* k : {"accuracy", "f1_macro", "recall", "f1_black_hole", "f1_normal"})
            add(k, variant, node, m.at(k).get<double>());
        for (const char* k : {"tp", "fp", "tn", "fn"})
            add(k, variant, node, m.at("confusion").at(k).get<double>());
    }
    void eval(const json& e, const std::string& variant) {
        metrics(e, variant, "all");
        for (const auto& [n, m] : e.at("per_node").items()) metrics(m, variant, n);
    }
};

int cmd_report(const Options& opt, std::ostream& log) {
    Run run(opt, "report", log);
    ReportRows r;
    bool any = false;
    if (fs::exists(run.path("eval_report.json"))) {
        const json j = read_json(run.path("eval_report.json"));
        r.eval(j.at("metrics"), "detector");
        run.input(run.path("eval_report.json"));
        any = true;
    }
    if (fs::exists(run.path("paired_report.json"))) {
        const json j = read_json(run.path("paired_report.json"));
        for (const char* v : {"with_bhmm", "without_bhmm"}) {
            r.eval(j.at(v).at("eval"), v);
            for (const auto& [n, f] : j.at(v).at("features").items())
                r.add("n_features", v, n, f.at("count").get<double>());
        }
        for (const auto& [k, d] : j.at("delta").items()) r.add(k, "delta", "all", d.get<double>());
        run.input(run.path("paired_report.json"));
        any = true;
    }
    if (fs::exists(run.path("pdr_report.json"))) {
        const json j = read_json(run.path("pdr_report.json"));
        const json& c = j.at("comparison");
        const std::string variant = "mitigation_" + j.at("mitigation").get<std::string>();
        r.add("pdr_gain_mean", variant, "all", c.at("mean_gain").get<double>());
        for (const auto& [n, g] : c.at("mean_gain_per_node").items()) r.add("pdr_gain_mean", variant, n, g.get<double>());
        for (const auto& w : c.at("windows")) {
            const std::string node = w.at("node").get<std::string>();
            const std::string win = "window_" + std::to_string(w.at("start_s").get<std::int64_t>());
            r.add("pdr_without", win, node, w.at("pdr_without").get<double>());
            r.add("pdr_with", win, node, w.at("pdr_with").get<double>());
            r.add("pdr_gain", win, node, w.at("gain").get<double>());
        }
        run.input(run.path("pdr_report.json"));
        any = true;
    }
    if (!any) throw Error("no reports found in " + run.out.string() + "; run evaluate first");

    std::ofstream out(run.path("report.csv"), std::ios::binary);
    if (!out) throw Error("cannot write " + run.path("report.csv").string());
    out << "metric,variant,node,value\n";
    for (const auto& row : r.rows) {
        for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << csv::escape(row[k]);
        out << '\n';
    }
    out.close();
    run.output("report.csv");
    run.commit();
    log << "report: " << r.rows.size() << " rows -> " << run.path("report.csv").string() << '\n';
    return 0;
}

}  // namespace

// --- entry points ----------------------------------------------------------

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Black-hole detection experiments on router telemetry", "bhdetect"};
    app.require_subcommand(1, 1);
    Options opt;

    auto common = [&](CLI::App* sc) {
        sc->add_option("--config", opt.config, "Experiment config (JSON)");
        sc->add_option("--out", opt.out, "Output directory");
        sc->add_option("--seed", opt.seed, "Run seed (overrides the config and scenario)");
        sc->add_option("--period", opt.period, "Sampling period in seconds for CSV inputs");
    };
    auto* sim = app.add_subcommand("simulate", "Simulate telemetry, labels and delivery for a scenario");
    common(sim);
    sim->add_option("--scenario", opt.scenario, "Scenario file (overrides the config)");

    auto* ing = app.add_subcommand("ingest", "Normalize a raw telemetry CSV");
    common(ing);
    ing->add_option("--input", opt.input, "Raw CSV")->required();

    auto* bh = app.add_subcommand("bhmm", "Build the reduced feature matrix");
    common(bh);
    bh->add_option("--input", opt.input, "Telemetry CSV (default: <out>/telemetry.csv)");
    bh->add_option("--sparse-threshold", opt.sparse_threshold, "Zero fraction at which a sensor is dropped")
        ->check(CLI::Range(0.0, 1.0));
    bh->add_option("--corr-threshold", opt.corr_threshold, "Absolute Pearson r above which a pair is pruned")
        ->check(CLI::Range(0.0, 1.0));
    bh->add_option("--scope", opt.scope, "global or per_node")->check(CLI::IsMember({"global", "per_node"}));

    auto* tu = app.add_subcommand("tune", "Tune DBSCAN per node on the validation rows");
    common(tu);
    tu->add_option("--input", opt.input, "Feature CSV (default: <out>/bhmm_matrix.csv)");
    tu->add_option("--eps", opt.grid_eps, "eps grid")->delimiter(',');
    tu->add_option("--min-pts", opt.grid_min_pts, "min_pts grid")->delimiter(',');

    auto* de = app.add_subcommand("detect", "Flag black-hole rows per node");
    common(de);
    de->add_option("--input", opt.input, "Feature CSV (default: <out>/bhmm_matrix.csv)");
    de->add_option("--eps", opt.eps, "Explicit eps (skips the tuning report)");
    de->add_option("--min-pts", opt.min_pts, "Explicit min_pts");
    de->add_option("--mode", opt.mode, "per_node, per_feature or whole_matrix")
        ->check(CLI::IsMember({"per_node", "per_feature", "whole_matrix"}));

    auto* ev = app.add_subcommand("evaluate", "Score detections and measure PDR gain");
    common(ev);
    ev->add_flag("--paired", opt.paired, "Also run the with/without-BHMM comparison");
    ev->add_option("--scenario", opt.scenario, "Scenario file for the PDR runs (overrides the config)");

    auto* rp = app.add_subcommand("report", "Flatten reports into report.csv");
    common(rp);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n' << "run 'bhdetect --help' for usage\n";
        return 2;
    }

    try {
        if (sim->parsed()) return cmd_simulate(opt, out);
        if (ing->parsed()) return cmd_ingest(opt, out);
        if (bh->parsed()) return cmd_bhmm(opt, out);
        if (tu->parsed()) return cmd_tune(opt, out);
        if (de->parsed()) return cmd_detect(opt, out);
        if (ev->parsed()) return cmd_evaluate(opt, out);
        if (rp->parsed()) return cmd_report(opt, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace bhdetect
