#include "bhdetect/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <thread>

#include "bhdetect/rng.hpp"

namespace bhdetect {

using nlohmann::json;

// --- Splitting -------------------------------------------------------------

std::string_view to_string(SplitMode m) {
    return m == SplitMode::chronological ? "chronological" : "seeded_random";
}

SplitMode parse_split_mode(std::string_view s) {
    if (s == "chronological") return SplitMode::chronological;
    if (s == "seeded_random") return SplitMode::seeded_random;
    throw ConfigError("unknown split mode '" + std::string(s) + "'");
}

void SplitSpec::validate() const {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
    if (!(validation_fraction_of_total > 0.0 && validation_fraction_of_total < train_fraction))
        throw ConfigError("validation fraction must be positive and smaller than the train fraction");
}

namespace {

// floor(f * n) that is not thrown off when f * n is an integer in exact
// arithmetic but lands just below it in floating point (0.7 * 17280).
std::size_t fraction_count(double f, std::size_t n) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
}

}  // namespace

SplitIndices split_indices(std::size_t n, const SplitSpec& spec, std::uint64_t seed) {
    spec.validate();
    if (n < 10) throw Error("split needs at least 10 rows, got " + std::to_string(n));
    const std::size_t n_train = fraction_count(spec.train_fraction, n);
    const std::size_t n_val = fraction_count(spec.validation_fraction_of_total, n);
    if (n_train == 0 || n_val == 0 || n_train == n) throw Error("split leaves an empty part");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (spec.mode == SplitMode::seeded_random) {
        Rng rng = Rng::derive(seed, "split");
        for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_index(i + 1)]);
    }
    SplitIndices s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train - n_val),
                        order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.validation.begin(), s.validation.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

DatasetSplit split_dataset(const FeatureMatrix& m, const SplitSpec& spec, std::uint64_t seed) {
    DatasetSplit d;
    d.indices = split_indices(m.rows(), spec, seed);
    d.train = m.select_rows(d.indices.train);
    d.validation = m.select_rows(d.indices.validation);
    d.test = m.select_rows(d.indices.test);
    return d;
}

// --- Scoring ---------------------------------------------------------------

Metrics Metrics::from_confusion(const Confusion& c) {
    Metrics m;
    m.confusion = c;
    const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
    const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
    const double n = tp + fp + tn + fn;
    m.accuracy = n > 0 ? (tp + tn) / n : 0.0;
    m.recall_undefined = c.tp + c.fn == 0;
    m.recall = m.recall_undefined ? 0.0 : tp / (tp + fn);
    // A class absent from both truth and prediction is matched perfectly.
    const double dp = 2 * tp + fp + fn;
    const double dn = 2 * tn + fn + fp;
    m.f1_positive = dp > 0 ? 2 * tp / dp : 1.0;
    m.f1_negative = dn > 0 ? 2 * tn / dn : 1.0;
    m.f1_macro = 0.5 * (m.f1_positive + m.f1_negative);
    return m;
}

json Metrics::to_json() const {
    json j = {{"accuracy", accuracy},
              {"f1_macro", f1_macro},
              {"recall", recall},
              {"f1_black_hole", f1_positive},
              {"f1_normal", f1_negative},
              {"confusion", {{"tp", confusion.tp}, {"fp", confusion.fp}, {"tn", confusion.tn}, {"fn", confusion.fn}}}};
    if (recall_undefined) j["note"] = "no black-hole samples in truth; recall reported as 0";
    return j;
}

json EvalReport::to_json() const {
    json j = overall.to_json();
    j["per_node"] = json::object();
    for (const auto& [n, m] : per_node) j["per_node"][n] = m.to_json();
    return j;
}

EvalReport score_detections(const FlagTable& predicted, const FlagTable& truth) {
    using Key = std::pair<std::int64_t, std::string>;
    auto keys = [](const FlagTable& f) {
        std::set<Key> k;
        for (auto t : f.timestamps)
            for (const auto& n : f.nodes) k.insert({t, n});
        return k;
    };
    if (predicted.timestamps != truth.timestamps || predicted.nodes != truth.nodes) {
        const auto kp = keys(predicted);
        const auto kt = keys(truth);
        std::vector<Key> extra, missing;
        std::set_difference(kp.begin(), kp.end(), kt.begin(), kt.end(), std::back_inserter(extra));
        std::set_difference(kt.begin(), kt.end(), kp.begin(), kp.end(), std::back_inserter(missing));
        if (!extra.empty() || !missing.empty()) {
            auto list = [](const std::vector<Key>& v) {
                std::string s;
                for (std::size_t i = 0; i < std::min<std::size_t>(v.size(), 5); ++i)
                    s += (i ? ", " : "") + std::string("(") + std::to_string(v[i].first) + ", " + v[i].second + ")";
                if (v.size() > 5) s += ", ... (" + std::to_string(v.size()) + " total)";
                return s;
            };
            throw Error("prediction and truth keys differ; extra: [" + list(extra) + "]; missing: [" + list(missing) +
                        "]");
        }
    }

    // Same key set; align by lookup so node or row order may differ.
    std::map<std::int64_t, std::size_t> trow;
    for (std::size_t t = 0; t < truth.timestamps.size(); ++t) trow[truth.timestamps[t]] = t;
    EvalReport rep;
    Confusion all;
    for (std::size_t pn = 0; pn < predicted.nodes.size(); ++pn) {
        const std::size_t tn = truth.node_index(predicted.nodes[pn]);
        Confusion c;
        for (std::size_t pt = 0; pt < predicted.timestamps.size(); ++pt) {
            const bool p = predicted.at(pt, pn);
            const bool y = truth.at(trow.at(predicted.timestamps[pt]), tn);
            if (p && y) ++c.tp;
            else if (p) ++c.fp;
            else if (y) ++c.fn;
            else ++c.tn;
        }
        all.tp += c.tp;
        all.fp += c.fp;
        all.tn += c.tn;
        all.fn += c.fn;
        rep.per_node[predicted.nodes[pn]] = Metrics::from_confusion(c);
    }
    rep.overall = Metrics::from_confusion(all);
    return rep;
}

// --- Timing ----------------------------------------------------------------

TimingEntry time_detector_fit(const Matrix& m, const DbscanParams& params, int repeats) {
    std::vector<std::string> names(static_cast<std::size_t>(m.cols()));
    for (std::size_t j = 0; j < names.size(); ++j) names[j] = "f" + std::to_string(j);
    TimingEntry e;
    e.n_features = static_cast<std::size_t>(m.cols());
    e.n_samples = static_cast<std::size_t>(m.rows());
    e.fit_seconds = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, repeats); ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const Standardizer s = Standardizer::fit(m, names);
        const ClusterAssignment ca = dbscan(s.apply(m), params);
        const auto t1 = std::chrono::steady_clock::now();
        if (ca.labels.size() != e.n_samples) throw Error("internal: DBSCAN label count mismatch");
        e.fit_seconds = std::min(e.fit_seconds, std::chrono::duration<double>(t1 - t0).count());
    }
    return e;
}

json environment_note() {
    json j;
#if defined(__clang__)
    j["compiler"] = "clang " __clang_version__;
#elif defined(__GNUC__)
    j["compiler"] = "gcc " __VERSION__;
#endif
    j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    j["simd"] = Eigen::SimdInstructionSetsInUse();
    j["hardware_threads"] = std::thread::hardware_concurrency();
    j["clock"] = "steady_clock";
    return j;
}

FlagTable select_flags(const FlagTable& f, std::span<const std::size_t> rows, std::span<const std::string> nodes) {
    std::vector<std::int64_t> ts;
    for (auto r : rows) ts.push_back(f.timestamps.at(r));
    FlagTable out(std::move(ts), std::vector<std::string>(nodes.begin(), nodes.end()));
    for (std::size_t n = 0; n < nodes.size(); ++n) {
        const std::size_t src = f.node_index(nodes[n]);
        if (src == f.nodes.size()) throw Error("node '" + nodes[n] + "' is missing from the flag table");
        for (std::size_t k = 0; k < rows.size(); ++k) out.set(k, n, f.at(rows[k], src));
    }
    return out;
}

// --- BHMM comparison -------------------------------------------------------

namespace {

std::vector<std::size_t> columns_varying_on(const FeatureMatrix& m, std::span<const std::size_t> rows) {
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < m.cols(); ++j) {
        const double first = m.values(static_cast<Eigen::Index>(rows.front()), static_cast<Eigen::Index>(j));
        for (auto r : rows)
            if (m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) != first) {
                keep.push_back(j);
                break;
            }
    }
    return keep;
}

json params_json(const DbscanParams& p) { return {{"eps", p.eps}, {"min_pts", p.min_pts}}; }

json arm_json(const ArmResult& a) {
    json j;
    j["eval"] = a.eval.to_json();
    j["selected"] = json::object();
    for (const auto& [n, p] : a.selected) j["selected"][n] = params_json(p);
    j["features"] = json::object();
    for (const auto& [n, f] : a.features) j["features"][n] = {{"count", f.size()}, {"columns", f}};
    j["tuning"] = json::object();
    for (const auto& [n, t] : a.tuning) j["tuning"][n] = t.to_json();
    return j;
}

}  // namespace

NodeDetector prepare_node_detector(const FeatureMatrix& full, const SplitIndices& split, const std::string& node) {
    const FeatureMatrix m = full.select_columns(columns_varying_on(full, split.train));
    if (m.cols() == 0)
        throw Error(node.empty() ? std::string("no varying feature columns")
                                 : "node '" + node + "' has no varying feature columns");
    NodeDetector d;
    d.columns = m.column_names;
    d.standardizer = Standardizer::fit(m.select_rows(split.train));
    return d;
}

NodeDetector fit_node_detector(const FeatureMatrix& full, const SplitIndices& split, const TuningGrid& grid,
                               const std::string& node) {
    NodeDetector d = prepare_node_detector(full, split, node);
    std::vector<std::size_t> cols;
    for (const auto& c : d.columns) cols.push_back(full.column_index(c));
    d.tuning = tune_on_standardized(d.standardizer.apply(full.select_columns(cols).select_rows(split.validation).values),
                                    grid);
    return d;
}

std::map<std::string, FeatureMatrix> node_feature_sets(const TelemetryDataset& dataset,
                                                       std::span<const std::string> nodes, bool apply_bhmm,
                                                       const BhmmParams& params,
                                                       std::map<std::string, BhmmReport>* reports) {
    std::map<std::string, FeatureMatrix> out;
    for (const auto& node : nodes) {
        std::vector<std::size_t> cols;
        for (std::size_t j = 0; j < dataset.cols(); ++j)
            if (dataset.node_of_column[j] == node) cols.push_back(j);
        if (cols.empty()) throw Error("node '" + node + "' has no feature columns");
        const TelemetryDataset sub = dataset.select_columns(cols);
        if (apply_bhmm) {
            auto r = run_bhmm_pipeline(sub, params);
            out[node] = std::move(r.matrix);
            if (reports) (*reports)[node] = std::move(r.report);
        } else {
            out[node] = drop_constant_features(FeatureMatrix::from_dataset(sub)).matrix;
        }
    }
    return out;
}

ArmResult run_detection_arm(const std::map<std::string, FeatureMatrix>& node_features, const FlagTable& truth,
                            const CompareConfig& config) {
    if (node_features.empty()) throw Error("no nodes to evaluate");
    const std::size_t n_rows = node_features.begin()->second.rows();
    const SplitIndices split = split_indices(n_rows, config.split, config.seed);

    ArmResult arm;
    std::vector<std::string> nodes;
    for (const auto& [node, _] : node_features) nodes.push_back(node);
    arm.flags = FlagTable({}, nodes);
    for (auto r : split.test) arm.flags.timestamps.push_back(node_features.begin()->second.timestamps.at(r));
    arm.flags.values.assign(arm.flags.timestamps.size() * nodes.size(), 0);
    arm.timing.n_samples = split.test.size();

    for (std::size_t n = 0; n < nodes.size(); ++n) {
        const FeatureMatrix& full = node_features.at(nodes[n]);
        if (full.rows() != n_rows || full.timestamps != node_features.begin()->second.timestamps)
            throw Error("per-node feature matrices must share timestamps");
        const NodeDetector det = fit_node_detector(full, split, config.grid, nodes[n]);
        arm.features[nodes[n]] = det.columns;
        arm.selected[nodes[n]] = det.tuning.selected;
        arm.tuning[nodes[n]] = det.tuning;

        std::vector<std::size_t> cols;
        for (const auto& c : det.columns) cols.push_back(full.column_index(c));
        const Matrix test = full.select_columns(cols).select_rows(split.test).values;
        const auto t0 = std::chrono::steady_clock::now();
        const ClusterAssignment ca = dbscan(det.standardizer.apply(test), det.tuning.selected);
        const auto t1 = std::chrono::steady_clock::now();
        arm.timing.fit_seconds += std::chrono::duration<double>(t1 - t0).count();
        arm.timing.n_features += det.columns.size();
        for (std::size_t k = 0; k < ca.labels.size(); ++k)
            if (ca.labels[k] < 0) arm.flags.set(k, n, true);
    }
    arm.eval = score_detections(arm.flags, select_flags(truth, split.test, nodes));
    return arm;
}

BhmmComparison compare_bhmm(const TelemetryDataset& dataset, const CompareConfig& config) {
    dataset.validate();
    if (!dataset.labels) throw Error("ground truth required: dataset has no labels");
    std::vector<std::string> nodes = config.nodes;
    if (nodes.empty()) {
        for (const auto& n : dataset.labels->nodes)
            if (std::find(dataset.node_of_column.begin(), dataset.node_of_column.end(), n) !=
                dataset.node_of_column.end())
                nodes.push_back(n);
    }
    if (nodes.empty()) throw Error("no labeled node has feature columns");

    const auto raw = node_feature_sets(dataset, nodes, false, config.bhmm);
    const auto reduced = node_feature_sets(dataset, nodes, true, config.bhmm);

    BhmmComparison out;
    out.without_bhmm = run_detection_arm(raw, *dataset.labels, config);
    out.with_bhmm = run_detection_arm(reduced, *dataset.labels, config);
    return out;
}

json BhmmComparison::to_json() const {
    json j;
    j["with_bhmm"] = arm_json(with_bhmm);
    j["without_bhmm"] = arm_json(without_bhmm);
    j["delta"] = {{"accuracy", with_bhmm.eval.overall.accuracy - without_bhmm.eval.overall.accuracy},
                  {"f1_macro", with_bhmm.eval.overall.f1_macro - without_bhmm.eval.overall.f1_macro},
                  {"recall", with_bhmm.eval.overall.recall - without_bhmm.eval.overall.recall}};
    return j;
}

json BhmmComparison::timing_json() const {
    auto entry = [](const TimingEntry& e) {
        return json{{"n_features", e.n_features}, {"n_samples", e.n_samples}, {"fit_seconds", e.fit_seconds}};
    };
    return {{"with_bhmm", entry(with_bhmm.timing)},
            {"without_bhmm", entry(without_bhmm.timing)},
            {"environment", environment_note()}};
}

// --- PDR gain --------------------------------------------------------------

PdrComparison pdr_gain(const SimOutput& without, const SimOutput& with) {
    if (without.seed != with.seed) throw Error("unpaired runs: seeds differ");
    if (without.events != with.events) throw Error("unpaired runs: event schedules differ");
    if (without.flows != with.flows) throw Error("unpaired runs: flows differ");
    if (without.delivery.records.size() != with.delivery.records.size() ||
        without.delivery.period_s != with.delivery.period_s)
        throw Error("unpaired runs: delivery logs differ in layout");
    for (std::size_t i = 0; i < without.delivery.records.size(); ++i) {
        const auto& a = without.delivery.records[i];
        const auto& b = with.delivery.records[i];
        if (a.interval_start != b.interval_start || a.flow != b.flow || a.sent != b.sent)
            throw Error("unpaired runs: offered traffic differs");
    }

    PdrComparison out;
    std::vector<BlackHoleEvent> events = without.events;
    std::sort(events.begin(), events.end(),
              [](const auto& a, const auto& b) { return std::tie(a.start_s, a.node) < std::tie(b.start_s, b.node); });
    std::map<std::string, std::pair<double, std::size_t>> per_node;
    for (const auto& e : events) {
        PdrWindow w;
        w.node = e.node;
        w.start_s = e.start_s;
        w.end_s = e.end_s();
        std::set<std::size_t> crossing;
        for (const auto& r : without.route_trace)
            if (r.interval_start >= w.start_s && r.interval_start < w.end_s &&
                std::find(r.path.begin(), r.path.end(), e.node) != r.path.end())
                crossing.insert(r.flow);
        std::vector<std::size_t> flows(crossing.begin(), crossing.end());
        for (auto f : flows) w.flows.push_back(without.flows[f].name());
        w.pdr_without = compute_pdr(without.delivery, w.start_s, w.end_s, flows);
        w.pdr_with = compute_pdr(with.delivery, w.start_s, w.end_s, flows);
        w.gain = w.pdr_with - w.pdr_without;
        auto& acc = per_node[w.node];
        acc.first += w.gain;
        ++acc.second;
        out.mean_gain += w.gain;
        out.windows.push_back(std::move(w));
    }
    if (!out.windows.empty()) out.mean_gain /= static_cast<double>(out.windows.size());
    for (const auto& [n, acc] : per_node) out.mean_gain_per_node[n] = acc.first / static_cast<double>(acc.second);
    return out;
}

json PdrComparison::to_json() const {
    json j;
    j["windows"] = json::array();
    for (const auto& w : windows)
        j["windows"].push_back({{"node", w.node},
                                {"start_s", w.start_s},
                                {"end_s", w.end_s},
                                {"flows", w.flows},
                                {"pdr_without", w.pdr_without},
                                {"pdr_with", w.pdr_with},
                                {"gain", w.gain}});
    j["mean_gain"] = mean_gain;
    j["mean_gain_per_node"] = mean_gain_per_node;
    return j;
}

}  // namespace bhdetect
