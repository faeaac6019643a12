#pragma once

// Black Hole-sensitive Metric Matrix (BHMM): the feature-engineering pass that
// turns raw sensor telemetry into the detector's input.
//
//   1. drop constant sensors
//   2. drop sparse (mostly-zero) sensors
//   3. add temporal features (minute of day, ISO week, ISO weekday)
//   4. add input/output ratio features per interface
//   5. prune one side of every highly correlated pair
//
// Temporal columns are exempt from every drop step.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bhdetect/common.hpp"
#include "bhdetect/telemetry_schema.hpp"

namespace bhdetect {

enum class Provenance { raw_sensor, temporal, io_ratio };

std::string_view to_string(Provenance p);

/// Division guard for ratio features.
inline constexpr double kRatioEpsilon = 1e-6;

struct FeatureMatrix {
    std::vector<std::int64_t> timestamps;
    std::vector<std::string> column_names;
    Matrix values;
    std::vector<Provenance> provenance;
    std::vector<std::string> node_of_column;

    std::size_t rows() const { return timestamps.size(); }
    std::size_t cols() const { return column_names.size(); }
    void validate() const;

    /// Provenance is inferred from the column names.
    static FeatureMatrix from_dataset(const TelemetryDataset& ds);
    TelemetryDataset to_dataset(std::int64_t period_s) const;

    FeatureMatrix select_columns(std::span<const std::size_t> idx) const;
    FeatureMatrix select_rows(std::span<const std::size_t> idx) const;
    std::size_t column_index(std::string_view name) const;  // cols() when absent
};

Provenance infer_provenance(std::string_view column);

struct SparseDrop {
    std::string column;
    double zero_fraction = 0.0;
};

struct RatioFeature {
    std::string numerator;
    std::string denominator;
    std::string column;
};

struct CorrelatedPair {
    std::string a;
    std::string b;
    double r = 0.0;
};

struct PrunedFeature {
    std::string removed;
    std::string kept;
    double r = 0.0;
};

struct BhmmReport {
    std::vector<std::string> input_columns;
    std::vector<std::string> dropped_constant;
    std::vector<SparseDrop> dropped_sparse;
    std::vector<std::string> added_temporal;
    std::vector<RatioFeature> added_ratio;
    std::vector<std::string> unpaired_io;
    std::vector<CorrelatedPair> correlation_pairs;
    std::vector<PrunedFeature> pruned;
    std::vector<std::string> final_columns;
    double sparse_threshold = 0.95;
    double corr_threshold = 0.9;

    nlohmann::json to_json() const;
    static BhmmReport from_json(const nlohmann::json& j);
};

struct BhmmParams {
    double sparse_threshold = 0.95;
    double corr_threshold = 0.9;
};

struct ConstantDropResult {
    FeatureMatrix matrix;
    std::vector<std::string> dropped;
};
ConstantDropResult drop_constant_features(const FeatureMatrix& m);

struct SparseDropResult {
    FeatureMatrix matrix;
    std::vector<SparseDrop> dropped;
};
SparseDropResult drop_sparse_features(const FeatureMatrix& m, double zero_fraction_threshold);

/// Calendar fields in UTC.
struct CalendarFields {
    int minute_of_day = 0;  // 0..1439
    int iso_week = 1;       // 1..53
    int iso_weekday = 1;    // Monday = 1 .. Sunday = 7
};
CalendarFields calendar_fields(std::int64_t epoch_seconds);

/// Appends minute, week_of_year and day_of_week (skipping any already present).
FeatureMatrix add_temporal_features(const FeatureMatrix& m, std::vector<std::string>* added = nullptr);

struct RatioResult {
    FeatureMatrix matrix;
    std::vector<RatioFeature> added;
    std::vector<std::string> unpaired;
};
/// For each "<model>.<scope>.input_X" with a matching "output_X" appends
/// "I/O <model>.<scope>.X" = input / max(output, kRatioEpsilon).
RatioResult add_io_ratio_features(const FeatureMatrix& m);

/// Pearson r for every column pair. Throws on a zero-variance column.
Matrix pearson_correlation_matrix(const FeatureMatrix& m);

/// Lower rank = preferred representative when pruning.
int representative_rank(std::string_view column);

struct PruneResult {
    FeatureMatrix matrix;
    std::vector<CorrelatedPair> pairs;  // every pair with |r| > threshold, strongest first
    std::vector<PrunedFeature> pruned;
};
/// Greedy pruning over pairs with |r| > threshold in descending |r|: the
/// lower-priority member of a pair whose members both survive is removed.
/// Temporal columns never take part.
PruneResult prune_correlated(const FeatureMatrix& m, const Matrix& corr, double threshold = 0.9);

struct BhmmResult {
    FeatureMatrix matrix;
    BhmmReport report;
};
BhmmResult run_bhmm_pipeline(const TelemetryDataset& dataset, const BhmmParams& params = {});

}  // namespace bhdetect
