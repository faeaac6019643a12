#pragma once

// Dataset splitting, detection scoring, the with/without-BHMM comparison and
// packet-delivery-ratio gain under mitigation.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bhdetect/bhmm.hpp"
#include "bhdetect/common.hpp"
#include "bhdetect/detector.hpp"
#include "bhdetect/netsim.hpp"
#include "bhdetect/telemetry_schema.hpp"

namespace bhdetect {

enum class SplitMode { chronological, seeded_random };
std::string_view to_string(SplitMode m);
SplitMode parse_split_mode(std::string_view s);

struct SplitSpec {
    double train_fraction = 0.70;
    double validation_fraction_of_total = 0.15;  // carved out of train
    SplitMode mode = SplitMode::chronological;

    void validate() const;
};

/// Row indices, each list ascending. validation is a subset of train.
struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

/// train = floor(train_fraction * n) rows, validation = floor(validation
/// fraction * n) rows taken from the tail of train (chronological) or of the
/// shuffled train block (seeded_random), test = the rest. Needs n >= 10.
SplitIndices split_indices(std::size_t n, const SplitSpec& spec, std::uint64_t seed = 0);

struct DatasetSplit {
    FeatureMatrix train;
    FeatureMatrix validation;
    FeatureMatrix test;
    SplitIndices indices;
};
DatasetSplit split_dataset(const FeatureMatrix& m, const SplitSpec& spec, std::uint64_t seed = 0);

struct Confusion {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::size_t total() const { return tp + fp + tn + fn; }
    friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct Metrics {
    Confusion confusion;
    double accuracy = 0.0;
    double recall = 0.0;
    double f1_positive = 0.0;
    double f1_negative = 0.0;
    double f1_macro = 0.0;
    bool recall_undefined = false;  // no positives in the truth; recall reported as 0

    static Metrics from_confusion(const Confusion& c);
    nlohmann::json to_json() const;
};

struct EvalReport {
    Metrics overall;
    std::map<std::string, Metrics> per_node;

    nlohmann::json to_json() const;
};

/// Sub-table on the given row indices and nodes (in that order). Throws when
/// a node is absent.
FlagTable select_flags(const FlagTable& f, std::span<const std::size_t> rows, std::span<const std::string> nodes);

/// Predicted and truth must cover the same (timestamp, node) keys.
EvalReport score_detections(const FlagTable& predicted, const FlagTable& truth);

struct TimingEntry {
    std::size_t n_features = 0;
    std::size_t n_samples = 0;
    double fit_seconds = 0.0;
};

/// Wall-clock seconds to standardize `m` and run DBSCAN on it, best of `repeats`.
TimingEntry time_detector_fit(const Matrix& m, const DbscanParams& params, int repeats = 1);

nlohmann::json environment_note();

struct CompareConfig {
    std::vector<std::string> nodes;  // empty: every labeled node with columns
    SplitSpec split;
    std::uint64_t seed = 0;
    TuningGrid grid;
    BhmmParams bhmm;
};

struct ArmResult {
    EvalReport eval;
    std::map<std::string, DbscanParams> selected;
    std::map<std::string, TuningReport> tuning;
    std::map<std::string, std::vector<std::string>> features;  // per node
    TimingEntry timing;  // summed over nodes: test-split standardize + DBSCAN
    FlagTable flags;     // test rows only
};

/// Detector state for one node: the columns that vary over the training rows,
/// their training statistics and the tuned parameters.
struct NodeDetector {
    std::vector<std::string> columns;
    Standardizer standardizer;
    TuningReport tuning;
};

/// Drops columns constant over `split.train` and fits the standardizer on the
/// training rows. Tuning is left at its defaults.
NodeDetector prepare_node_detector(const FeatureMatrix& m, const SplitIndices& split, const std::string& node = {});

/// prepare_node_detector, then tuning on the standardized `split.validation` rows.
NodeDetector fit_node_detector(const FeatureMatrix& m, const SplitIndices& split, const TuningGrid& grid,
                               const std::string& node = {});

/// Each node's own columns, either raw with constant columns removed or
/// passed through the BHMM pipeline on their own.
std::map<std::string, FeatureMatrix> node_feature_sets(const TelemetryDataset& dataset,
                                                       std::span<const std::string> nodes, bool apply_bhmm,
                                                       const BhmmParams& params,
                                                       std::map<std::string, BhmmReport>* reports = nullptr);

struct BhmmComparison {
    ArmResult with_bhmm;
    ArmResult without_bhmm;

    nlohmann::json to_json() const;         // deterministic content
    nlohmann::json timing_json() const;     // wall-clock figures
};

/// Runs the identical per-node detector on (a) each node's raw columns with
/// constant columns removed and (b) each node's BHMM output. Both arms share
/// the split, grid and tuning budget. Standardization is fitted on train,
/// tuning scores the validation rows and detection runs on the test rows.
BhmmComparison compare_bhmm(const TelemetryDataset& dataset, const CompareConfig& config);

/// One arm on an explicit per-node feature selection.
ArmResult run_detection_arm(const std::map<std::string, FeatureMatrix>& node_features, const FlagTable& truth,
                            const CompareConfig& config);

struct PdrWindow {
    std::string node;
    std::int64_t start_s = 0;
    std::int64_t end_s = 0;
    std::vector<std::string> flows;  // flows whose unmitigated path crosses the node
    double pdr_without = 1.0;
    double pdr_with = 1.0;
    double gain = 0.0;
};

struct PdrComparison {
    std::vector<PdrWindow> windows;
    double mean_gain = 0.0;
    std::map<std::string, double> mean_gain_per_node;

    nlohmann::json to_json() const;
};

/// Per event window [start, end): PDR over the flows routed through the event
/// node in the unmitigated run (all flows when none are). Throws when the
/// runs are not paired (seed, flows, events or delivery layout differ).
PdrComparison pdr_gain(const SimOutput& without, const SimOutput& with);

}  // namespace bhdetect
