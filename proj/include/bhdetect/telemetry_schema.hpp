#pragma once

// Sensor vocabulary for the four monitored YANG sensor groups and the
// time-aligned telemetry dataset built from them.
//
//   M1  infra-statistics .../latest/protocols/protocol   per interface
//   M2  infra-statistics .../latest/data-rate            per interface
//   M3  ip-rib-ipv4 route table, BGP                     per protocol
//   M4  ip-rib-ipv4 route table, IS-IS                   per protocol
//
// Canonical column names are "<model>.<scope>.<metric>". Scopes may contain
// dots (sub-interfaces); the model is the text before the first dot and the
// metric is the text after the last one. A scope of the form
// "<router>/<name>" ties the column to a router.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bhdetect/common.hpp"

namespace bhdetect {

enum class ModelId { M1, M2, M3, M4 };

enum class Metric {
    input_data_rate,
    input_packet_rate,
    output_data_rate,
    output_packet_rate,
    input_load,
    output_load,
    routes_count,
    active_routes_count,
    backup_routes_count,
    deleted_routes_count,
    paths_count,
    protocol_route_memory,
    redistribution_client_count,
    protocol_clients_count,
};

enum class Unit { kbps, packets_per_second, load_fraction_255, count, bytes, dimensionless };

std::string_view to_string(ModelId m);
std::string_view to_string(Metric m);
std::string_view to_string(Unit u);
std::optional<ModelId> parse_model(std::string_view s);
std::optional<Metric> parse_metric(std::string_view s);

bool metric_allowed(ModelId model, Metric metric);
Unit unit_of(Metric metric);

/// Metric lists in catalog order.
std::span<const Metric> interface_metrics(ModelId model);  // M1 or M2
std::span<const Metric> route_table_metrics();             // M3 / M4

struct SensorDescriptor {
    ModelId model = ModelId::M1;
    std::string scope;
    Metric metric = Metric::input_data_rate;

    Unit unit() const { return unit_of(metric); }
    std::string column_name() const;

    friend bool operator==(const SensorDescriptor&, const SensorDescriptor&) = default;
};

/// Ordering M1 < M2 < M3 < M4, then scope, then metric declaration order.
bool catalog_less(const SensorDescriptor& a, const SensorDescriptor& b);

/// Splits a canonical column name. Returns nullopt for names that are not
/// sensor columns (temporal or derived features, free-form names).
std::optional<SensorDescriptor> parse_column_name(std::string_view name);

/// Router part of a "<router>/<name>" scope; empty when the scope has none.
std::string router_of_scope(std::string_view scope);

class SensorCatalog {
public:
    SensorCatalog() = default;
    /// Sorts into canonical order; throws on illegal or duplicate entries.
    explicit SensorCatalog(std::vector<SensorDescriptor> descriptors);

    const std::vector<SensorDescriptor>& descriptors() const { return descriptors_; }
    const std::vector<std::string>& column_names() const { return column_names_; }
    std::size_t size() const { return descriptors_.size(); }
    bool contains(std::string_view column) const;

    static SensorCatalog merge(std::span<const SensorCatalog> parts);

private:
    std::vector<SensorDescriptor> descriptors_;
    std::vector<std::string> column_names_;
};

/// One descriptor per (interface x M1 metric), (interface x M2 metric) and
/// (protocol x route-table metric). Protocols are "BGP" (M3) and "ISIS" (M4).
/// A non-empty router prefixes every scope as "<router>/<name>".
SensorCatalog build_sensor_catalog(std::span<const std::string> interfaces,
                                   std::span<const std::string> protocols,
                                   std::string_view router = {});

struct TelemetryDataset {
    std::vector<std::int64_t> timestamps;
    std::int64_t period_s = 300;
    std::vector<std::string> columns;
    Matrix values;
    std::vector<std::string> node_of_column;  // "" for columns not tied to a router
    std::optional<FlagTable> labels;

    std::size_t rows() const { return timestamps.size(); }
    std::size_t cols() const { return columns.size(); }

    /// Throws Error on any broken invariant.
    void validate() const;

    /// Distinct non-empty routers in column order.
    std::vector<std::string> nodes() const;
    std::size_t column_index(std::string_view name) const;  // cols() when absent

    TelemetryDataset select_columns(std::span<const std::size_t> idx) const;
    TelemetryDataset select_rows(std::span<const std::size_t> idx) const;
};

/// node_of_column derived from scopes, "" where no router is named.
std::vector<std::string> infer_nodes(std::span<const std::string> columns);

struct IngestResult {
    TelemetryDataset dataset;
    std::vector<std::int64_t> filled_timestamps;  // slots created by forward fill
    std::vector<std::string> log;
};

/// Reads "timestamp,<col>,..." CSV. Rows are sorted by timestamp and missing
/// slots are forward-filled. When a catalog is supplied every column must
/// belong to it.
IngestResult ingest_csv(const std::filesystem::path& path, std::int64_t period_s,
                        const SensorCatalog* catalog = nullptr);
IngestResult ingest_csv(std::istream& in, std::int64_t period_s,
                        const SensorCatalog* catalog = nullptr);

void write_telemetry_csv(const TelemetryDataset& ds, std::ostream& out);
void write_telemetry_csv(const TelemetryDataset& ds, const std::filesystem::path& path);

/// Label sidecar: "timestamp,node,black_hole".
void write_labels_csv(const FlagTable& flags, std::ostream& out);
void write_labels_csv(const FlagTable& flags, const std::filesystem::path& path);
FlagTable read_labels_csv(const std::filesystem::path& path);
FlagTable read_labels_csv(std::istream& in);

/// labels[t, n] = true iff an event at n covers t. Label nodes are the roster
/// when given, otherwise the dataset's nodes.
TelemetryDataset merge_labels(const TelemetryDataset& dataset,
                              std::span<const BlackHoleEvent> events,
                              std::span<const std::string> roster = {});

}  // namespace bhdetect
