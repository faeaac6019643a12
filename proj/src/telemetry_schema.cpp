#include "bhdetect/telemetry_schema.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "bhdetect/csv.hpp"
#include "bhdetect/log.hpp"

namespace bhdetect {
namespace {

constexpr std::array kM1Metrics{Metric::input_data_rate, Metric::input_packet_rate,
                                Metric::output_data_rate, Metric::output_packet_rate};
constexpr std::array kM2Metrics{Metric::input_data_rate, Metric::input_packet_rate,
                                Metric::output_data_rate, Metric::output_packet_rate,
                                Metric::input_load,      Metric::output_load};
constexpr std::array kRouteMetrics{Metric::routes_count,
                                   Metric::active_routes_count,
                                   Metric::backup_routes_count,
                                   Metric::deleted_routes_count,
                                   Metric::paths_count,
                                   Metric::protocol_route_memory,
                                   Metric::redistribution_client_count,
                                   Metric::protocol_clients_count};

constexpr std::array<std::string_view, 14> kMetricNames{
    "input_data_rate",     "input_packet_rate",    "output_data_rate",
    "output_packet_rate",  "input_load",           "output_load",
    "routes_count",        "active_routes_count",  "backup_routes_count",
    "deleted_routes_count", "paths_count",         "protocol_route_memory",
    "redistribution_client_count", "protocol_clients_count"};

}  // namespace

std::string_view to_string(ModelId m) {
    switch (m) {
        case ModelId::M1: return "M1";
        case ModelId::M2: return "M2";
        case ModelId::M3: return "M3";
        case ModelId::M4: return "M4";
    }
    return "?";
}

std::string_view to_string(Metric m) { return kMetricNames[static_cast<std::size_t>(m)]; }

std::string_view to_string(Unit u) {
    switch (u) {
        case Unit::kbps: return "kbps";
        case Unit::packets_per_second: return "packets_per_second";
        case Unit::load_fraction_255: return "load_fraction_255";
        case Unit::count: return "count";
        case Unit::bytes: return "bytes";
        case Unit::dimensionless: return "dimensionless";
    }
    return "?";
}

std::optional<ModelId> parse_model(std::string_view s) {
    if (s == "M1") return ModelId::M1;
    if (s == "M2") return ModelId::M2;
    if (s == "M3") return ModelId::M3;
    if (s == "M4") return ModelId::M4;
    return std::nullopt;
}

std::optional<Metric> parse_metric(std::string_view s) {
    for (std::size_t i = 0; i < kMetricNames.size(); ++i)
        if (kMetricNames[i] == s) return static_cast<Metric>(i);
    return std::nullopt;
}

std::span<const Metric> interface_metrics(ModelId model) {
    if (model == ModelId::M1) return kM1Metrics;
    if (model == ModelId::M2) return kM2Metrics;
    return {};
}

std::span<const Metric> route_table_metrics() { return kRouteMetrics; }

bool metric_allowed(ModelId model, Metric metric) {
    std::span<const Metric> allowed =
        (model == ModelId::M3 || model == ModelId::M4) ? route_table_metrics() : interface_metrics(model);
    return std::find(allowed.begin(), allowed.end(), metric) != allowed.end();
}

Unit unit_of(Metric metric) {
    switch (metric) {
        case Metric::input_data_rate:
        case Metric::output_data_rate: return Unit::kbps;
        case Metric::input_packet_rate:
        case Metric::output_packet_rate: return Unit::packets_per_second;
        case Metric::input_load:
        case Metric::output_load: return Unit::load_fraction_255;
        case Metric::protocol_route_memory: return Unit::bytes;
        default: return Unit::count;
    }
}

std::string SensorDescriptor::column_name() const {
    std::string out(to_string(model));
    out += '.';
    out += scope;
    out += '.';
    out += to_string(metric);
    return out;
}

bool catalog_less(const SensorDescriptor& a, const SensorDescriptor& b) {
    if (a.model != b.model) return a.model < b.model;
    if (a.scope != b.scope) return a.scope < b.scope;
    return a.metric < b.metric;
}

std::optional<SensorDescriptor> parse_column_name(std::string_view name) {
    const auto first = name.find('.');
    const auto last = name.rfind('.');
    if (first == std::string_view::npos || first == last) return std::nullopt;
    auto model = parse_model(name.substr(0, first));
    auto metric = parse_metric(name.substr(last + 1));
    if (!model || !metric || !metric_allowed(*model, *metric)) return std::nullopt;
    auto scope = name.substr(first + 1, last - first - 1);
    if (scope.empty()) return std::nullopt;
    return SensorDescriptor{*model, std::string(scope), *metric};
}

std::string router_of_scope(std::string_view scope) {
    const auto slash = scope.find('/');
    if (slash == std::string_view::npos) return {};
    return std::string(scope.substr(0, slash));
}

SensorCatalog::SensorCatalog(std::vector<SensorDescriptor> descriptors)
    : descriptors_(std::move(descriptors)) {
    for (const auto& d : descriptors_) {
        if (!metric_allowed(d.model, d.metric))
            throw Error("metric " + std::string(to_string(d.metric)) + " is not defined for " +
                        std::string(to_string(d.model)));
        if (d.scope.empty()) throw Error("sensor scope must not be empty");
    }
    std::sort(descriptors_.begin(), descriptors_.end(), catalog_less);
    auto dup = std::adjacent_find(descriptors_.begin(), descriptors_.end());
    if (dup != descriptors_.end()) throw Error("duplicate sensor " + dup->column_name());
    column_names_.reserve(descriptors_.size());
    for (const auto& d : descriptors_) column_names_.push_back(d.column_name());
}

bool SensorCatalog::contains(std::string_view column) const {
    return std::find(column_names_.begin(), column_names_.end(), column) != column_names_.end();
}

SensorCatalog SensorCatalog::merge(std::span<const SensorCatalog> parts) {
    std::vector<SensorDescriptor> all;
    for (const auto& p : parts) all.insert(all.end(), p.descriptors().begin(), p.descriptors().end());
    return SensorCatalog(std::move(all));
}

SensorCatalog build_sensor_catalog(std::span<const std::string> interfaces,
                                   std::span<const std::string> protocols,
                                   std::string_view router) {
    if (interfaces.empty()) throw Error("catalog would be empty: no interfaces given");
    auto scoped = [&](const std::string& name) {
        return router.empty() ? name : std::string(router) + "/" + name;
    };

    std::vector<SensorDescriptor> out;
    for (ModelId model : {ModelId::M1, ModelId::M2})
        for (const auto& iface : interfaces) {
            if (iface.empty()) throw Error("interface name must not be empty");
            for (Metric m : interface_metrics(model)) out.push_back({model, scoped(iface), m});
        }
    for (const auto& proto : protocols) {
        ModelId model;
        if (proto == "BGP")
            model = ModelId::M3;
        else if (proto == "ISIS")
            model = ModelId::M4;
        else
            throw Error("unknown routing protocol '" + proto + "' (expected BGP or ISIS)");
        for (Metric m : route_table_metrics()) out.push_back({model, scoped(proto), m});
    }
    return SensorCatalog(std::move(out));
}

// --- TelemetryDataset ------------------------------------------------------

void TelemetryDataset::validate() const {
    if (period_s <= 0) throw Error("period_s must be positive");
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
        if (timestamps[i] - timestamps[i - 1] != period_s)
            throw Error("timestamps must be uniformly spaced by period_s (index " + std::to_string(i) + ")");
    }
    if (static_cast<std::size_t>(values.rows()) != timestamps.size() ||
        static_cast<std::size_t>(values.cols()) != columns.size())
        throw Error("value matrix does not match timestamps x columns");
    if (node_of_column.size() != columns.size()) throw Error("node_of_column size mismatch");
    if (!values.allFinite()) throw Error("telemetry values must be finite");
    std::set<std::string_view> seen;
    for (const auto& c : columns)
        if (!seen.insert(c).second) throw Error("duplicate column " + c);
    if (labels) {
        if (labels->timestamps != timestamps) throw Error("label timestamps do not match dataset");
        if (labels->values.size() != labels->timestamps.size() * labels->nodes.size())
            throw Error("label grid size mismatch");
    }
}

std::vector<std::string> TelemetryDataset::nodes() const {
    std::vector<std::string> out;
    for (const auto& n : node_of_column)
        if (!n.empty() && std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
    return out;
}

std::size_t TelemetryDataset::column_index(std::string_view name) const {
    return static_cast<std::size_t>(std::find(columns.begin(), columns.end(), name) - columns.begin());
}

TelemetryDataset TelemetryDataset::select_columns(std::span<const std::size_t> idx) const {
    TelemetryDataset out;
    out.timestamps = timestamps;
    out.period_s = period_s;
    out.labels = labels;
    out.values.resize(values.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out.columns.push_back(columns.at(idx[k]));
        out.node_of_column.push_back(node_of_column.at(idx[k]));
        out.values.col(static_cast<Eigen::Index>(k)) = values.col(static_cast<Eigen::Index>(idx[k]));
    }
    return out;
}

TelemetryDataset TelemetryDataset::select_rows(std::span<const std::size_t> idx) const {
    TelemetryDataset out;
    out.period_s = period_s;
    out.columns = columns;
    out.node_of_column = node_of_column;
    out.values.resize(static_cast<Eigen::Index>(idx.size()), values.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out.timestamps.push_back(timestamps.at(idx[k]));
        out.values.row(static_cast<Eigen::Index>(k)) = values.row(static_cast<Eigen::Index>(idx[k]));
    }
    if (labels) {
        FlagTable lt(out.timestamps, labels->nodes);
        for (std::size_t k = 0; k < idx.size(); ++k)
            for (std::size_t n = 0; n < lt.nodes.size(); ++n) lt.set(k, n, labels->at(idx[k], n));
        out.labels = std::move(lt);
    }
    return out;
}

std::vector<std::string> infer_nodes(std::span<const std::string> columns) {
    std::vector<std::string> out;
    out.reserve(columns.size());
    for (const auto& c : columns) {
        std::string node;
        if (auto d = parse_column_name(c)) {
            node = router_of_scope(d->scope);
        } else if (c.starts_with("I/O ")) {
            // "I/O <model>.<scope>.<quantity>"
            const std::string_view rest = std::string_view(c).substr(4);
            const auto first = rest.find('.');
            const auto last = rest.rfind('.');
            if (first != std::string_view::npos && last > first)
                node = router_of_scope(rest.substr(first + 1, last - first - 1));
        }
        out.push_back(std::move(node));
    }
    return out;
}

// --- CSV ingestion ---------------------------------------------------------

IngestResult ingest_csv(const std::filesystem::path& path, std::int64_t period_s,
                        const SensorCatalog* catalog) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open telemetry file " + path.string());
    return ingest_csv(in, period_s, catalog);
}

IngestResult ingest_csv(std::istream& in, std::int64_t period_s, const SensorCatalog* catalog) {
    if (period_s <= 0) throw ConfigError("period_s must be positive");
    std::vector<std::string> header;
    if (!csv::read_record(in, header) || header.empty()) throw Error("telemetry CSV is empty");
    if (header[0] != "timestamp") throw Error("first CSV column must be 'timestamp'");
    std::vector<std::string> columns(header.begin() + 1, header.end());
    if (columns.empty()) throw Error("telemetry CSV has no value columns");
    {
        std::set<std::string_view> seen;
        for (const auto& c : columns)
            if (!seen.insert(c).second) throw Error("duplicate column '" + c + "' in header");
    }
    if (catalog) {
        for (const auto& c : columns)
            if (!catalog->contains(c)) throw Error("column '" + c + "' is not in the sensor catalog");
    }

    struct Row {
        std::int64_t ts;
        std::vector<double> v;
    };
    std::vector<Row> rows;
    std::vector<std::string> fields;
    std::size_t line = 1;
    while (csv::read_record(in, fields)) {
        ++line;
        if (fields.size() == 1 && fields[0].empty()) continue;  // blank line
        if (fields.size() != header.size())
            throw Error("row " + std::to_string(line) + ": expected " + std::to_string(header.size()) +
                        " fields, got " + std::to_string(fields.size()));
        long long ts = 0;
        if (!csv::parse_int64(fields[0], ts))
            throw Error("row " + std::to_string(line) + ", column 'timestamp': not an integer: '" + fields[0] + "'");
        Row r{ts, std::vector<double>(columns.size())};
        for (std::size_t j = 0; j < columns.size(); ++j) {
            double x = 0;
            if (!csv::parse_double(fields[j + 1], x) || !std::isfinite(x))
                throw Error("row " + std::to_string(line) + ", column '" + columns[j] +
                            "': not a finite number: '" + fields[j + 1] + "'");
            r.v[j] = x;
        }
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw Error("telemetry CSV has no data rows");

    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.ts < b.ts; });
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].ts == rows[i - 1].ts) throw Error("duplicate timestamp " + std::to_string(rows[i].ts));

    IngestResult result;
    auto& ds = result.dataset;
    ds.period_s = period_s;
    ds.columns = columns;
    ds.node_of_column = infer_nodes(columns);

    std::vector<const Row*> aligned;
    aligned.push_back(&rows[0]);
    ds.timestamps.push_back(rows[0].ts);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const std::int64_t gap = rows[i].ts - rows[i - 1].ts;
        if (gap % period_s != 0)
            throw Error("timestamp " + std::to_string(rows[i].ts) + " is not aligned to the " +
                        std::to_string(period_s) + " s period");
        for (std::int64_t t = rows[i - 1].ts + period_s; t < rows[i].ts; t += period_s) {
            ds.timestamps.push_back(t);
            aligned.push_back(aligned.back());
            result.filled_timestamps.push_back(t);
            result.log.push_back("forward-filled missing slot " + std::to_string(t) + " from " +
                                 std::to_string(rows[i - 1].ts));
        }
        ds.timestamps.push_back(rows[i].ts);
        aligned.push_back(&rows[i]);
    }

    ds.values.resize(static_cast<Eigen::Index>(aligned.size()), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t i = 0; i < aligned.size(); ++i)
        for (std::size_t j = 0; j < columns.size(); ++j)
            ds.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = aligned[i]->v[j];
    ds.validate();
    return result;
}

void write_telemetry_csv(const TelemetryDataset& ds, std::ostream& out) {
    std::vector<std::string> fields{"timestamp"};
    fields.insert(fields.end(), ds.columns.begin(), ds.columns.end());
    csv::write_record(out, fields);
    std::string line;
    for (std::size_t i = 0; i < ds.rows(); ++i) {
        line = std::to_string(ds.timestamps[i]);
        for (Eigen::Index j = 0; j < ds.values.cols(); ++j) {
            line += ',';
            line += format_double(ds.values(static_cast<Eigen::Index>(i), j));
        }
        line += '\n';
        out << line;
    }
}

void write_telemetry_csv(const TelemetryDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    write_telemetry_csv(ds, out);
}

void write_labels_csv(const FlagTable& flags, std::ostream& out) {
    out << "timestamp,node,black_hole\n";
    for (std::size_t t = 0; t < flags.timestamps.size(); ++t)
        for (std::size_t n = 0; n < flags.nodes.size(); ++n)
            out << flags.timestamps[t] << ',' << csv::escape(flags.nodes[n]) << ','
                << (flags.at(t, n) ? 1 : 0) << '\n';
}

void write_labels_csv(const FlagTable& flags, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    write_labels_csv(flags, out);
}

FlagTable read_labels_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open label file " + path.string());
    return read_labels_csv(in);
}

FlagTable read_labels_csv(std::istream& in) {
    std::vector<std::string> fields;
    if (!csv::read_record(in, fields) || fields.size() != 3 || fields[0] != "timestamp" ||
        fields[1] != "node" || fields[2] != "black_hole")
        throw Error("label CSV header must be 'timestamp,node,black_hole'");
    std::map<std::pair<std::int64_t, std::string>, bool> entries;
    std::set<std::int64_t> ts;
    std::vector<std::string> nodes;
    std::size_t line = 1;
    while (csv::read_record(in, fields)) {
        ++line;
        if (fields.size() == 1 && fields[0].empty()) continue;
        long long t = 0;
        if (fields.size() != 3 || !csv::parse_int64(fields[0], t) || (fields[2] != "0" && fields[2] != "1"))
            throw Error("label CSV row " + std::to_string(line) + " is malformed");
        if (std::find(nodes.begin(), nodes.end(), fields[1]) == nodes.end()) nodes.push_back(fields[1]);
        ts.insert(t);
        if (!entries.emplace(std::pair{static_cast<std::int64_t>(t), fields[1]}, fields[2] == "1").second)
            throw Error("label CSV row " + std::to_string(line) + " duplicates an earlier entry");
    }
    FlagTable out(std::vector<std::int64_t>(ts.begin(), ts.end()), nodes);
    if (entries.size() != out.values.size()) throw Error("label CSV does not cover every (timestamp, node) pair");
    for (std::size_t i = 0; i < out.timestamps.size(); ++i)
        for (std::size_t n = 0; n < nodes.size(); ++n)
            out.set(i, n, entries.at({out.timestamps[i], nodes[n]}));
    return out;
}

TelemetryDataset merge_labels(const TelemetryDataset& dataset, std::span<const BlackHoleEvent> events,
                              std::span<const std::string> roster) {
    std::vector<std::string> nodes =
        roster.empty() ? dataset.nodes() : std::vector<std::string>(roster.begin(), roster.end());
    FlagTable labels(dataset.timestamps, nodes);
    for (const auto& ev : events) {
        const std::size_t n = labels.node_index(ev.node);
        if (n == nodes.size()) throw Error("black-hole event references unknown node '" + ev.node + "'");
        if (ev.duration_s <= 0) throw Error("black-hole event duration must be positive");
        bool any = false;
        for (std::size_t t = 0; t < labels.timestamps.size(); ++t) {
            if (ev.covers(labels.timestamps[t])) {
                labels.set(t, n, true);
                any = true;
            }
        }
        if (!any)
            log::warn("black-hole event at " + ev.node + " starting " + std::to_string(ev.start_s) +
                      " does not overlap the dataset");
    }
    TelemetryDataset out = dataset;
    out.labels = std::move(labels);
    return out;
}

}  // namespace bhdetect
