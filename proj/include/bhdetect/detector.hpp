#pragma once

// Standardization, DBSCAN, clustering validity indices, hyperparameter
// tuning and per-node black-hole flagging. DBSCAN noise rows are the
// black-hole candidates.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bhdetect/bhmm.hpp"
#include "bhdetect/common.hpp"

namespace bhdetect {

struct DbscanParams {
    double eps = 1.0;
    std::size_t min_pts = 5;

    void validate() const;  // throws ConfigError
    friend bool operator==(const DbscanParams&, const DbscanParams&) = default;
    friend auto operator<=>(const DbscanParams&, const DbscanParams&) = default;
};

struct ClusterAssignment {
    std::vector<int> labels;             // -1 = noise, else 0..n_clusters-1
    std::vector<std::uint8_t> core_flags;
    int n_clusters = 0;

    std::size_t noise_count() const;
};

class Standardizer {
public:
    Standardizer() = default;

    /// Population mean / std per column. Throws naming any zero-std column.
    static Standardizer fit(const FeatureMatrix& train);
    static Standardizer fit(const Matrix& train, std::span<const std::string> columns);

    FeatureMatrix apply(const FeatureMatrix& m) const;  // columns must match by name
    Matrix apply(const Matrix& m) const;

    const std::vector<std::string>& columns() const { return columns_; }
    const Vector& mean() const { return mean_; }
    const Vector& stddev() const { return std_; }

private:
    std::vector<std::string> columns_;
    Vector mean_;
    Vector std_;
};

/// Classic DBSCAN with Euclidean distance. Neighborhoods are inclusive
/// (d <= eps) and contain the point itself. Clusters are numbered by their
/// lowest core row; a border point joins the lowest-numbered cluster that
/// has a core point within eps, which is what row-order expansion yields.
ClusterAssignment dbscan(const Matrix& points, const DbscanParams& params);

/// Pairwise squared Euclidean distances, computed exactly.
Matrix pairwise_sq_distances(const Matrix& points);

/// DBSCAN on a precomputed squared-distance matrix.
ClusterAssignment dbscan_precomputed(const Matrix& sq_dist, const DbscanParams& params);

/// Mean silhouette over non-noise rows. Throws "silhouette undefined" with
/// fewer than two clusters.
double silhouette_score(const Matrix& points, std::span<const int> labels);
double silhouette_score_precomputed(const Matrix& sq_dist, std::span<const int> labels);

/// Davies-Bouldin index over non-noise rows. Throws with fewer than two
/// clusters or on coincident centroids.
double davies_bouldin_score(const Matrix& points, std::span<const int> labels);

struct TuningGrid {
    std::vector<double> eps;
    std::vector<std::size_t> min_pts;
    int rounds = 3;
    double max_noise_fraction = 1.0;  // cells above this are recorded as invalid

    void validate() const;
};

struct TuningCell {
    DbscanParams params;
    bool valid = false;
    std::string reason;  // why a cell is invalid
    double silhouette = 0.0;
    double davies_bouldin = 0.0;
    int n_clusters = 0;
    double noise_fraction = 0.0;
};

struct TuningReport {
    std::vector<TuningCell> cells;  // every evaluated cell, sorted by (eps, min_pts)
    std::vector<DbscanParams> path; // coordinate-descent trajectory
    DbscanParams selected;

    nlohmann::json to_json() const;
    static TuningReport from_json(const nlohmann::json& j);
};

/// Lower Davies-Bouldin wins, then higher silhouette, then smaller (eps, min_pts).
bool better_cell(const TuningCell& a, const TuningCell& b);

/// Tunes on `validation` after standardizing it with statistics fitted on
/// `train`. Coordinate descent: sweep eps at the current min_pts (initially
/// the first listed), then min_pts at the chosen eps, for `rounds` rounds or
/// until nothing changes. Throws when no evaluated cell is valid.
TuningReport tune_hyperparameters(const FeatureMatrix& train, const FeatureMatrix& validation,
                                  const TuningGrid& grid);
/// Same, on an already standardized validation matrix.
TuningReport tune_on_standardized(const Matrix& validation, const TuningGrid& grid);

enum class DetectMode { per_node, per_feature, whole_matrix };
std::string_view to_string(DetectMode m);
DetectMode parse_detect_mode(std::string_view s);

struct DetectConfig {
    DetectMode mode = DetectMode::per_node;
    DbscanParams params;                          // default for every node
    std::map<std::string, DbscanParams> per_node; // overrides
    std::vector<std::string> nodes;               // empty: every node with columns

    const DbscanParams& params_for(const std::string& node) const;
};

/// Columns used for a node: its own columns plus temporal ones.
std::vector<std::size_t> node_feature_columns(const FeatureMatrix& m, const std::string& node);

/// Flags noise rows per node. `m` should already be standardized.
///  per_node     one DBSCAN over the node's columns
///  per_feature  one DBSCAN per node column; a row is flagged when any is noise
///  whole_matrix one DBSCAN over all columns; noise flags every node
FlagTable detect_black_holes(const FeatureMatrix& m, const DetectConfig& config);

nlohmann::json flags_to_json(const FlagTable& flags);

}  // namespace bhdetect
