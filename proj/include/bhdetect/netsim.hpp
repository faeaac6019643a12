#pragma once

// Fluid-flow backbone simulator. Time advances in sampling periods; within a
// period traffic is a set of per-flow packet volumes that traverse the
// flow's current route and are absorbed by any router with an active
// black-hole event. Routers that black-hole stay in the routing plane, so
// routes only change when mitigation explicitly excludes a router.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bhdetect/common.hpp"
#include "bhdetect/telemetry_schema.hpp"

namespace bhdetect {

enum class NodeRole { core, edge };

struct Link {
    std::string a;
    std::string b;
    double weight = 1.0;
};

struct Interface {
    std::string name;  // e.g. "Bundle-Ether3.100"
    std::string peer;  // router or host on the other side
    bool to_host = false;
};

class Topology {
public:
    Topology() = default;
    Topology(std::vector<std::string> nodes, std::vector<Link> edges,
             std::map<std::string, std::string> hosts, std::map<std::string, NodeRole> roles,
             double capacity_kbps = 1e6);

    static Topology from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    const std::vector<std::string>& nodes() const { return nodes_; }
    const std::vector<Link>& edges() const { return edges_; }
    const std::map<std::string, std::string>& hosts() const { return hosts_; }
    const std::map<std::string, NodeRole>& roles() const { return roles_; }
    double capacity_kbps() const { return capacity_kbps_; }

    bool has_node(const std::string& n) const;
    std::size_t index_of(const std::string& node) const;  // throws when unknown
    NodeRole role(const std::string& node) const;
    const std::string& router_of_host(const std::string& host) const;

    /// (neighbor index, weight) pairs sorted by neighbor index.
    const std::vector<std::pair<std::size_t, double>>& neighbors(std::size_t node) const {
        return adjacency_[node];
    }
    /// Router links first (in neighbor order), then attached hosts.
    const std::vector<Interface>& interfaces(std::size_t node) const { return interfaces_[node]; }

    /// Least-weight route between two routers avoiding `excluded`; ties go to
    /// the lexicographically smallest node-index sequence. Empty when none.
    std::vector<std::size_t> shortest_path(std::size_t from, std::size_t to,
                                           const std::vector<bool>& excluded = {}) const;

private:
    void build();

    std::vector<std::string> nodes_;
    std::vector<Link> edges_;
    std::map<std::string, std::string> hosts_;
    std::map<std::string, NodeRole> roles_;
    double capacity_kbps_ = 1e6;
    std::vector<std::vector<std::pair<std::size_t, double>>> adjacency_;
    std::vector<std::vector<Interface>> interfaces_;
};

/// The bundled 8-router research topology.
Topology build_reference_topology();
Topology load_topology(const std::filesystem::path& path);

struct FlowSpec {
    std::string src;
    std::string dst;
    double rate_pps = 1000.0;
    double packet_bits = 8000.0;

    std::string name() const { return src + "->" + dst; }
    friend bool operator==(const FlowSpec&, const FlowSpec&) = default;
};

enum class DurationModel { fixed, exponential };

struct ScheduleParams {
    double per_interval_prob = 0.10;
    std::vector<std::string> candidate_nodes;
    double mean_duration_s = 900.0;
    std::int64_t t_begin = 0;
    std::int64_t t_end = 0;
    std::int64_t onset_interval_s = 3600;
    std::int64_t period_s = 300;  // durations are rounded to whole periods
    DurationModel duration_model = DurationModel::fixed;
    std::uint64_t seed = 0;
};

std::vector<BlackHoleEvent> schedule_black_holes(const Topology& topology, const ScheduleParams& params);

enum class MitigationMode { off, oracle, detector_feed };

std::string_view to_string(MitigationMode m);
MitigationMode parse_mitigation(std::string_view s);

struct TrafficProfile {
    double diurnal_amplitude = 0.6;  // night trough is (1 - amplitude) of the afternoon peak
    double peak_hour_utc = 15.0;
    double weekend_factor = 0.75;
    double jitter = 0.05;             // per-flow, per-interval multiplicative
    double unicast_share = 0.85;      // M1 counts the IPv4-unicast share of M2 totals
};

struct RouteModel {
    double churn_prob = 0.02;          // background deleted-routes bursts per interval
    double churn_mean = 25.0;
    double onset_deleted_bump = 0.0;   // extra deleted routes at event onset (off by default)
    double drift_sigma = 0.01;         // AR(1) innovation of route-table size
};

struct SimConfig {
    std::int64_t period_s = 300;
    std::int64_t t_begin = 0;
    std::int64_t t_end = 0;
    std::uint64_t seed = 0;
    MitigationMode mitigation = MitigationMode::off;
    std::int64_t hold_s = 900;
    double noise_sigma = 0.02;  // multiplicative sensor noise
    TrafficProfile traffic;
    RouteModel routes;
};

struct Detection {
    std::string node;
    std::int64_t detected_at_s = 0;
    friend bool operator==(const Detection&, const Detection&) = default;
};

struct DeliveryRecord {
    std::int64_t interval_start = 0;
    std::size_t flow = 0;
    double sent = 0.0;
    double delivered = 0.0;
};

struct DeliveryLog {
    std::int64_t period_s = 300;
    std::vector<std::string> flow_names;
    std::vector<DeliveryRecord> records;  // interval-major, flow-minor
};

struct RouteTraceEntry {
    std::int64_t interval_start = 0;
    std::size_t flow = 0;
    std::vector<std::string> path;  // routers, source side first
};

struct SimOutput {
    TelemetryDataset telemetry;
    DeliveryLog delivery;
    std::vector<BlackHoleEvent> events;
    std::vector<RouteTraceEntry> route_trace;
    std::vector<FlowSpec> flows;
    std::vector<Detection> detections;
    std::uint64_t seed = 0;
};

/// Everything needed to re-run a simulation.
struct SimState {
    Topology topology;
    std::vector<FlowSpec> flows;
    std::vector<BlackHoleEvent> events;
    SimConfig config;
};

/// Runs the simulation. With mitigation == oracle and no detections, every
/// event is treated as detected at its onset.
SimOutput simulate(const Topology& topology, std::span<const FlowSpec> flows,
                   std::span<const BlackHoleEvent> events, const SimConfig& config,
                   std::span<const Detection> detections = {});

/// Re-runs `state` with routing steered around detected routers. Exclusion
/// starts one period after detection and lasts until the covering event ends
/// (oracle) or for hold_s (detector_feed, or oracle without a covering event).
SimOutput apply_mitigation(const SimState& state, std::span<const Detection> detections);

/// Detections from a flag table: one per (node, first flagged timestamp of
/// each consecutive run).
std::vector<Detection> detections_from_flags(const FlagTable& flags);

/// Sum(delivered) / Sum(sent) over intervals starting in [t0, t1).
double compute_pdr(const DeliveryLog& log, std::int64_t t0, std::int64_t t1,
                   std::optional<std::size_t> flow = std::nullopt);
double compute_pdr(const DeliveryLog& log, std::int64_t t0, std::int64_t t1,
                   std::span<const std::size_t> flows);

void write_delivery_csv(const DeliveryLog& log, const std::filesystem::path& path);
void write_events_csv(std::span<const BlackHoleEvent> events, const std::filesystem::path& path);
std::vector<BlackHoleEvent> read_events_csv(const std::filesystem::path& path);
DeliveryLog read_delivery_csv(const std::filesystem::path& path, std::int64_t period_s);

/// Scenario file: topology, flows, black-hole schedule and simulator knobs.
struct Scenario {
    Topology topology;
    std::vector<FlowSpec> flows;
    SimConfig config;
    ScheduleParams blackhole;
    std::optional<std::vector<BlackHoleEvent>> explicit_events;

    static Scenario from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    nlohmann::json to_json() const;

    /// Replaces the run seed and the black-hole schedule seed derived from it.
    void reseed(std::uint64_t seed);

    /// Realized schedule: explicit events, or seeded draws otherwise.
    std::vector<BlackHoleEvent> events() const;
    SimState state() const;
};

Scenario load_scenario(const std::filesystem::path& path);

}  // namespace bhdetect
