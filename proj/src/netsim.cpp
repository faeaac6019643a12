#include "bhdetect/netsim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <queue>
#include <set>

#include "bhdetect/csv.hpp"
#include "bhdetect/log.hpp"
#include "bhdetect/rng.hpp"
#include "reference_topology_data.hpp"

namespace bhdetect {

using nlohmann::json;

// --- Topology --------------------------------------------------------------

Topology::Topology(std::vector<std::string> nodes, std::vector<Link> edges,
                   std::map<std::string, std::string> hosts, std::map<std::string, NodeRole> roles,
                   double capacity_kbps)
    : nodes_(std::move(nodes)), edges_(std::move(edges)), hosts_(std::move(hosts)),
      roles_(std::move(roles)), capacity_kbps_(capacity_kbps) {
    build();
}

bool Topology::has_node(const std::string& n) const {
    return std::find(nodes_.begin(), nodes_.end(), n) != nodes_.end();
}

std::size_t Topology::index_of(const std::string& node) const {
    auto it = std::find(nodes_.begin(), nodes_.end(), node);
    if (it == nodes_.end()) throw Error("unknown router '" + node + "'");
    return static_cast<std::size_t>(it - nodes_.begin());
}

NodeRole Topology::role(const std::string& node) const {
    auto it = roles_.find(node);
    if (it == roles_.end()) throw Error("unknown router '" + node + "'");
    return it->second;
}

const std::string& Topology::router_of_host(const std::string& host) const {
    auto it = hosts_.find(host);
    if (it == hosts_.end()) throw Error("unknown host '" + host + "'");
    return it->second;
}

void Topology::build() {
    if (nodes_.empty()) throw ConfigError("topology has no routers");
    if (!(capacity_kbps_ > 0)) throw ConfigError("link capacity must be positive");
    std::set<std::string> seen;
    for (const auto& n : nodes_) {
        if (n.empty() || !seen.insert(n).second) throw ConfigError("router names must be unique and non-empty");
        if (!roles_.contains(n)) throw ConfigError("router '" + n + "' has no role");
    }
    for (const auto& [n, r] : roles_)
        if (!seen.contains(n)) throw ConfigError("role given for unknown router '" + n + "'");

    adjacency_.assign(nodes_.size(), {});
    std::set<std::pair<std::size_t, std::size_t>> links;
    for (const auto& e : edges_) {
        if (!has_node(e.a) || !has_node(e.b)) throw ConfigError("link " + e.a + "-" + e.b + " names an unknown router");
        if (e.a == e.b) throw ConfigError("self-loop at " + e.a);
        if (!(e.weight > 0)) throw ConfigError("link weights must be positive");
        std::size_t a = index_of(e.a), b = index_of(e.b);
        if (!links.insert({std::min(a, b), std::max(a, b)}).second)
            throw ConfigError("duplicate link " + e.a + "-" + e.b);
        adjacency_[a].push_back({b, e.weight});
        adjacency_[b].push_back({a, e.weight});
    }
    for (auto& adj : adjacency_) std::sort(adj.begin(), adj.end());

    for (const auto& [host, router] : hosts_) {
        if (seen.contains(host)) throw ConfigError("host '" + host + "' clashes with a router name");
        if (!has_node(router)) throw ConfigError("host '" + host + "' attaches to unknown router '" + router + "'");
    }

    // Connectivity.
    std::vector<bool> reached(nodes_.size(), false);
    std::vector<std::size_t> stack{0};
    reached[0] = true;
    while (!stack.empty()) {
        auto u = stack.back();
        stack.pop_back();
        for (auto [v, w] : adjacency_[u])
            if (!reached[v]) {
                reached[v] = true;
                stack.push_back(v);
            }
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (!reached[i]) throw ConfigError("topology is not connected: " + nodes_[i] + " is unreachable");

    interfaces_.assign(nodes_.size(), {});
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        int k = 1;
        for (auto [v, w] : adjacency_[i])
            interfaces_[i].push_back({"Bundle-Ether" + std::to_string(k++) + ".100", nodes_[v], false});
        for (const auto& [host, router] : hosts_)
            if (router == nodes_[i])
                interfaces_[i].push_back({"Bundle-Ether" + std::to_string(k++) + ".100", host, true});
    }
}

std::vector<std::size_t> Topology::shortest_path(std::size_t from, std::size_t to,
                                                 const std::vector<bool>& excluded) const {
    auto is_excluded = [&](std::size_t v) { return !excluded.empty() && excluded[v]; };
    if (is_excluded(from) || is_excluded(to)) return {};

    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(nodes_.size(), inf);
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[to] = 0.0;
    pq.push({0.0, to});
    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (d > dist[u]) continue;
        for (auto [v, w] : adjacency_[u]) {
            if (is_excluded(v)) continue;
            if (d + w < dist[v]) {
                dist[v] = d + w;
                pq.push({dist[v], v});
            }
        }
    }
    if (dist[from] == inf) return {};

    std::vector<std::size_t> path{from};
    std::size_t u = from;
    while (u != to) {
        std::size_t next = nodes_.size();
        for (auto [v, w] : adjacency_[u]) {  // ascending neighbor index
            if (is_excluded(v) || dist[v] == inf) continue;
            if (std::abs(dist[u] - (w + dist[v])) <= 1e-9 * std::max(1.0, dist[u])) {
                next = v;
                break;
            }
        }
        if (next == nodes_.size()) throw Error("internal: shortest-path walk failed");
        path.push_back(next);
        u = next;
    }
    return path;
}

Topology Topology::from_json(const json& j) {
    std::vector<std::string> nodes = j.at("nodes").get<std::vector<std::string>>();
    std::vector<Link> edges;
    for (const auto& e : j.at("edges")) {
        if (!e.is_array() || e.size() < 2 || e.size() > 3) throw ConfigError("edges must be [a, b] or [a, b, weight]");
        edges.push_back({e[0].get<std::string>(), e[1].get<std::string>(), e.size() == 3 ? e[2].get<double>() : 1.0});
    }
    auto hosts = j.value("hosts", std::map<std::string, std::string>{});
    std::map<std::string, NodeRole> roles;
    for (const auto& [n, r] : j.at("roles").items()) {
        const auto s = r.get<std::string>();
        if (s == "core")
            roles[n] = NodeRole::core;
        else if (s == "edge")
            roles[n] = NodeRole::edge;
        else
            throw ConfigError("role must be 'core' or 'edge', got '" + s + "'");
    }
    return Topology(std::move(nodes), std::move(edges), std::move(hosts), std::move(roles),
                    j.value("capacity_kbps", 1e6));
}

json Topology::to_json() const {
    json j;
    j["nodes"] = nodes_;
    j["edges"] = json::array();
    for (const auto& e : edges_) j["edges"].push_back(json::array({e.a, e.b, e.weight}));
    j["hosts"] = hosts_;
    j["roles"] = json::object();
    for (const auto& [n, r] : roles_) j["roles"][n] = r == NodeRole::core ? "core" : "edge";
    j["capacity_kbps"] = capacity_kbps_;
    return j;
}

Topology build_reference_topology() {
    return Topology::from_json(json::parse(detail::kReferenceTopologyJson));
}

Topology load_topology(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open topology file " + path.string());
    try {
        return Topology::from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw ConfigError("invalid topology file " + path.string() + ": " + e.what());
    }
}

// --- Black-hole schedule ---------------------------------------------------

std::vector<BlackHoleEvent> schedule_black_holes(const Topology& topology, const ScheduleParams& p) {
    if (!(p.per_interval_prob >= 0.0 && p.per_interval_prob <= 1.0))
        throw ConfigError("black-hole probability must lie in [0, 1]");
    if (p.t_end <= p.t_begin) throw ConfigError("black-hole horizon is empty");
    if (p.onset_interval_s <= 0 || p.period_s <= 0) throw ConfigError("onset interval and period must be positive");
    if (!(p.mean_duration_s > 0)) throw ConfigError("black-hole duration must be positive");
    for (const auto& n : p.candidate_nodes)
        if (!topology.has_node(n)) throw ConfigError("candidate node '" + n + "' is not in the topology");

    Rng rng(p.seed);
    std::vector<BlackHoleEvent> events;
    std::vector<std::int64_t> busy_until(p.candidate_nodes.size(), std::numeric_limits<std::int64_t>::min());
    for (std::int64_t t = p.t_begin; t < p.t_end; t += p.onset_interval_s) {
        for (std::size_t k = 0; k < p.candidate_nodes.size(); ++k) {
            const double u = rng.uniform();
            const double draw = p.duration_model == DurationModel::exponential ? rng.exponential(p.mean_duration_s)
                                                                               : p.mean_duration_s;
            if (t < busy_until[k] || !(u < p.per_interval_prob)) continue;
            auto periods = static_cast<std::int64_t>(std::llround(draw / static_cast<double>(p.period_s)));
            const std::int64_t duration = std::max<std::int64_t>(1, periods) * p.period_s;
            events.push_back({p.candidate_nodes[k], t, duration, BlackHoleEvent::Kind::drop_transit});
            busy_until[k] = t + duration;
        }
    }
    return events;
}

std::string_view to_string(MitigationMode m) {
    switch (m) {
        case MitigationMode::off: return "off";
        case MitigationMode::oracle: return "oracle";
        case MitigationMode::detector_feed: return "detector_feed";
    }
    return "?";
}

MitigationMode parse_mitigation(std::string_view s) {
    if (s == "off") return MitigationMode::off;
    if (s == "oracle") return MitigationMode::oracle;
    if (s == "detector_feed") return MitigationMode::detector_feed;
    throw ConfigError("mitigation mode must be off, oracle or detector_feed");
}

// --- Simulation ------------------------------------------------------------

namespace {

struct ExclusionWindow {
    std::size_t node;
    std::int64_t begin;
    std::int64_t end;
};

double diurnal_factor(std::int64_t t, const TrafficProfile& tp) {
    const std::int64_t day = t >= 0 ? t / 86400 : (t - 86399) / 86400;
    const double hour = static_cast<double>(t - day * 86400) / 3600.0;
    double f = (1.0 - tp.diurnal_amplitude) +
               tp.diurnal_amplitude * 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * (hour - tp.peak_hour_utc) / 24.0));
    // 1970-01-01 was a Thursday; ISO weekday 6 and 7 are the weekend.
    const std::int64_t iso_dow = ((day % 7 + 7) % 7 + 3) % 7 + 1;
    if (iso_dow >= 6) f *= tp.weekend_factor;
    return f;
}

std::vector<ExclusionWindow> exclusion_windows(const Topology& topo, std::span<const BlackHoleEvent> events,
                                               std::span<const Detection> detections, const SimConfig& cfg) {
    std::vector<ExclusionWindow> out;
    if (cfg.mitigation == MitigationMode::off) {
        if (!detections.empty()) log::warn("mitigation is off; detections are ignored");
        return out;
    }
    std::vector<Detection> dets(detections.begin(), detections.end());
    if (dets.empty() && cfg.mitigation == MitigationMode::oracle)
        for (const auto& e : events) dets.push_back({e.node, e.start_s});

    for (const auto& d : dets) {
        if (!topo.has_node(d.node)) {
            log::warn("ignoring detection at unknown node '" + d.node + "'");
            continue;
        }
        const std::int64_t begin = d.detected_at_s + cfg.period_s;
        std::int64_t end = begin + cfg.hold_s;
        if (cfg.mitigation == MitigationMode::oracle) {
            for (const auto& e : events)
                if (e.node == d.node && e.covers(d.detected_at_s)) {
                    end = e.end_s();
                    break;
                }
        }
        if (end > begin) out.push_back({topo.index_of(d.node), begin, end});
    }
    return out;
}

struct SensorIndex {
    // column of (interface, metric) for M1/M2 and (protocol, metric) for M3/M4
    std::vector<std::vector<std::array<std::size_t, 6>>> m1;  // [router][iface][metric]
    std::vector<std::vector<std::array<std::size_t, 6>>> m2;
    std::vector<std::array<std::array<std::size_t, 8>, 2>> route;  // [router][proto][metric]
};

}  // namespace

SimOutput simulate(const Topology& topo, std::span<const FlowSpec> flows, std::span<const BlackHoleEvent> events,
                   const SimConfig& cfg, std::span<const Detection> detections) {
    if (cfg.period_s <= 0) throw ConfigError("period_s must be positive");
    if (cfg.t_end <= cfg.t_begin) throw ConfigError("simulation horizon is empty");
    if (cfg.noise_sigma < 0) throw ConfigError("noise sigma must be non-negative");
    if (flows.empty()) throw ConfigError("at least one flow is required");
    for (const auto& f : flows) {
        if (!(f.rate_pps > 0) || !(f.packet_bits > 0)) throw ConfigError("flow " + f.name() + " needs positive rate and packet size");
        if (f.src == f.dst) throw ConfigError("flow " + f.name() + " has identical endpoints");
        topo.router_of_host(f.src);
        topo.router_of_host(f.dst);
    }
    for (const auto& e : events) {
        if (!topo.has_node(e.node)) throw ConfigError("event references unknown router '" + e.node + "'");
        if (e.duration_s <= 0) throw ConfigError("event duration must be positive");
    }

    const std::size_t n_routers = topo.nodes().size();
    const std::size_t n_flows = flows.size();
    const auto n_intervals = static_cast<std::size_t>((cfg.t_end - cfg.t_begin + cfg.period_s - 1) / cfg.period_s);
    const double period = static_cast<double>(cfg.period_s);

    // Healthy routes.
    std::vector<std::vector<std::size_t>> healthy(n_flows);
    std::vector<std::size_t> src_router(n_flows), dst_router(n_flows);
    for (std::size_t f = 0; f < n_flows; ++f) {
        src_router[f] = topo.index_of(topo.router_of_host(flows[f].src));
        dst_router[f] = topo.index_of(topo.router_of_host(flows[f].dst));
        healthy[f] = topo.shortest_path(src_router[f], dst_router[f]);
        if (healthy[f].empty()) throw Error("flow " + flows[f].name() + " is not routable");
    }
    const auto windows = exclusion_windows(topo, events, detections, cfg);

    // Per-router black-out intervals, merged and sorted.
    std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> blackout(n_routers);
    std::vector<std::vector<std::int64_t>> onsets(n_routers);
    for (const auto& e : events) {
        blackout[topo.index_of(e.node)].push_back({e.start_s, e.end_s()});
        onsets[topo.index_of(e.node)].push_back(e.start_s);
    }
    for (std::size_t r = 0; r < n_routers; ++r) {
        auto& v = blackout[r];
        std::sort(v.begin(), v.end());
        std::vector<std::pair<std::int64_t, std::int64_t>> merged;
        for (const auto& iv : v) {
            if (!merged.empty() && iv.first <= merged.back().second)
                merged.back().second = std::max(merged.back().second, iv.second);
            else
                merged.push_back(iv);
        }
        v = std::move(merged);
        std::sort(onsets[r].begin(), onsets[r].end());
    }
    auto is_black = [&](std::size_t r, std::int64_t time) {
        const auto& v = blackout[r];
        auto it = std::upper_bound(v.begin(), v.end(), std::pair{time, std::numeric_limits<std::int64_t>::max()});
        return it != v.begin() && std::prev(it)->second > time;
    };

    // Sensor catalog for every router.
    std::vector<SensorCatalog> parts;
    const std::vector<std::string> protocols{"BGP", "ISIS"};
    for (std::size_t r = 0; r < n_routers; ++r) {
        std::vector<std::string> names;
        for (const auto& i : topo.interfaces(r)) names.push_back(i.name);
        parts.push_back(build_sensor_catalog(names, protocols, topo.nodes()[r]));
    }
    const SensorCatalog catalog = SensorCatalog::merge(parts);
    const auto& columns = catalog.column_names();
    auto col = [&](ModelId m, const std::string& scope, Metric metric) {
        SensorDescriptor d{m, scope, metric};
        auto it = std::lower_bound(catalog.descriptors().begin(), catalog.descriptors().end(), d, catalog_less);
        return static_cast<std::size_t>(it - catalog.descriptors().begin());
    };
    SensorIndex idx;
    idx.m1.resize(n_routers);
    idx.m2.resize(n_routers);
    idx.route.resize(n_routers);
    for (std::size_t r = 0; r < n_routers; ++r) {
        for (const auto& i : topo.interfaces(r)) {
            const std::string scope = topo.nodes()[r] + "/" + i.name;
            std::array<std::size_t, 6> a1{}, a2{};
            for (std::size_t k = 0; k < 6; ++k) {
                const auto metric = interface_metrics(ModelId::M2)[k];
                a2[k] = col(ModelId::M2, scope, metric);
                a1[k] = k < 4 ? col(ModelId::M1, scope, metric) : columns.size();
            }
            idx.m1[r].push_back(a1);
            idx.m2[r].push_back(a2);
        }
        for (std::size_t p = 0; p < 2; ++p)
            for (std::size_t k = 0; k < 8; ++k)
                idx.route[r][p][k] = col(p == 0 ? ModelId::M3 : ModelId::M4, topo.nodes()[r] + "/" + protocols[p],
                                         route_table_metrics()[k]);
    }

    // Interface lookup: iface index at router r facing peer name.
    auto iface_toward = [&](std::size_t r, const std::string& peer) {
        const auto& ifs = topo.interfaces(r);
        for (std::size_t k = 0; k < ifs.size(); ++k)
            if (ifs[k].peer == peer) return k;
        throw Error("internal: no interface from " + topo.nodes()[r] + " to " + peer);
    };

    SimOutput out;
    out.flows.assign(flows.begin(), flows.end());
    out.events.assign(events.begin(), events.end());
    out.detections.assign(detections.begin(), detections.end());
    out.seed = cfg.seed;
    out.delivery.period_s = cfg.period_s;
    for (const auto& f : flows) out.delivery.flow_names.push_back(f.name());

    auto& tel = out.telemetry;
    tel.period_s = cfg.period_s;
    tel.columns = columns;
    tel.node_of_column = infer_nodes(columns);
    tel.values = Matrix::Zero(static_cast<Eigen::Index>(n_intervals), static_cast<Eigen::Index>(columns.size()));

    Rng traffic_rng = Rng::derive(cfg.seed, "traffic");
    Rng sensor_rng = Rng::derive(cfg.seed, "sensors");
    Rng route_rng = Rng::derive(cfg.seed, "routes");

    // Route-table state per (router, protocol).
    struct RouteState {
        double base = 0, drift = 0, backup_drift = 0;
    };
    std::vector<std::array<RouteState, 2>> rstate(n_routers);
    for (std::size_t r = 0; r < n_routers; ++r) {
        const double degree = static_cast<double>(topo.neighbors(r).size());
        rstate[r][0].base = 850.0 + 40.0 * degree;                                   // BGP prefixes
        rstate[r][1].base = 12.0 * static_cast<double>(n_routers) + 6.0 * degree;    // IS-IS routes
    }
    const double ar = 0.995;
    const double backup_ar = 0.98;

    std::vector<double> in_pkts, out_pkts, in_bits, out_bits;
    std::vector<std::size_t> iface_offset(n_routers + 1, 0);
    for (std::size_t r = 0; r < n_routers; ++r) iface_offset[r + 1] = iface_offset[r] + topo.interfaces(r).size();
    const std::size_t n_ifaces = iface_offset[n_routers];

    std::vector<double> noise(columns.size());
    std::vector<double> offered(n_flows);

    for (std::size_t k = 0; k < n_intervals; ++k) {
        const std::int64_t t = cfg.t_begin + static_cast<std::int64_t>(k) * cfg.period_s;
        const std::int64_t t_next = t + cfg.period_s;
        tel.timestamps.push_back(t);

        // Random draws happen in a fixed order and count, independent of
        // routing and events, so paired runs see identical noise.
        const double load = diurnal_factor(t, cfg.traffic);
        for (std::size_t f = 0; f < n_flows; ++f)
            offered[f] = flows[f].rate_pps * period * load * std::max(0.0, 1.0 + cfg.traffic.jitter * traffic_rng.normal());
        for (auto& z : noise) z = std::max(0.0, 1.0 + cfg.noise_sigma * sensor_rng.normal());

        std::vector<bool> excluded(n_routers, false);
        for (const auto& w : windows)
            if (t >= w.begin && t < w.end) excluded[w.node] = true;

        in_pkts.assign(n_ifaces, 0.0);
        out_pkts.assign(n_ifaces, 0.0);
        in_bits.assign(n_ifaces, 0.0);
        out_bits.assign(n_ifaces, 0.0);

        for (std::size_t f = 0; f < n_flows; ++f) {
            std::vector<std::size_t> path = healthy[f];
            if (std::any_of(excluded.begin(), excluded.end(), [](bool b) { return b; })) {
                auto alt = topo.shortest_path(src_router[f], dst_router[f], excluded);
                if (!alt.empty()) path = std::move(alt);
            }
            RouteTraceEntry trace{t, f, {}};
            for (auto r : path) trace.path.push_back(topo.nodes()[r]);
            out.route_trace.push_back(std::move(trace));

            // Segment the interval at event boundaries of on-path routers.
            std::vector<std::int64_t> cuts{t, t_next};
            for (auto r : path)
                for (const auto& [b, e] : blackout[r]) {
                    if (b > t && b < t_next) cuts.push_back(b);
                    if (e > t && e < t_next) cuts.push_back(e);
                }
            std::sort(cuts.begin(), cuts.end());
            cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

            double delivered = 0.0;
            const double bits = flows[f].packet_bits;
            for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
                const double pkts = offered[f] * static_cast<double>(cuts[s + 1] - cuts[s]) / period;
                bool passed = true;
                std::string prev = flows[f].src;
                for (std::size_t h = 0; h < path.size(); ++h) {
                    const std::size_t r = path[h];
                    const std::size_t in_if = iface_offset[r] + iface_toward(r, prev);
                    in_pkts[in_if] += pkts;
                    in_bits[in_if] += pkts * bits;
                    if (is_black(r, cuts[s])) {
                        passed = false;
                        break;
                    }
                    const std::string next = h + 1 < path.size() ? topo.nodes()[path[h + 1]] : flows[f].dst;
                    const std::size_t out_if = iface_offset[r] + iface_toward(r, next);
                    out_pkts[out_if] += pkts;
                    out_bits[out_if] += pkts * bits;
                    prev = topo.nodes()[r];
                }
                if (passed) delivered += pkts;
            }
            out.delivery.records.push_back({t, f, offered[f], std::min(delivered, offered[f])});
        }

        // Interface sensors.
        auto row = tel.values.row(static_cast<Eigen::Index>(k));
        const double share = cfg.traffic.unicast_share;
        for (std::size_t r = 0; r < n_routers; ++r) {
            for (std::size_t i = 0; i < topo.interfaces(r).size(); ++i) {
                const std::size_t g = iface_offset[r] + i;
                const std::array<double, 4> truth{in_bits[g] / period / 1000.0, in_pkts[g] / period,
                                                  out_bits[g] / period / 1000.0, out_pkts[g] / period};
                const auto& c2 = idx.m2[r][i];
                const auto& c1 = idx.m1[r][i];
                for (std::size_t m = 0; m < 4; ++m) {
                    row(static_cast<Eigen::Index>(c2[m])) = truth[m] * noise[c2[m]];
                    row(static_cast<Eigen::Index>(c1[m])) = share * truth[m] * noise[c1[m]];
                }
                const double cap = topo.capacity_kbps();
                row(static_cast<Eigen::Index>(c2[4])) =
                    std::min(255.0, std::round(255.0 * truth[0] * noise[c2[4]] / cap));
                row(static_cast<Eigen::Index>(c2[5])) =
                    std::min(255.0, std::round(255.0 * truth[2] * noise[c2[5]] / cap));
            }
        }

        // Route-table sensors.
        for (std::size_t r = 0; r < n_routers; ++r) {
            for (std::size_t p = 0; p < 2; ++p) {
                auto& st = rstate[r][p];
                st.drift = ar * st.drift + cfg.routes.drift_sigma * route_rng.normal();
                st.backup_drift = backup_ar * st.backup_drift + 0.05 * route_rng.normal();
                const double churn_u = route_rng.uniform();
                const double churn_size = route_rng.exponential(cfg.routes.churn_mean);

                const double routes = st.base * (1.0 + st.drift);
                double deleted = churn_u < cfg.routes.churn_prob ? std::round(churn_size) + 1.0 : 0.0;
                if (cfg.routes.onset_deleted_bump > 0) {
                    const auto& on = onsets[r];
                    const auto hits = std::lower_bound(on.begin(), on.end(), t_next) - std::lower_bound(on.begin(), on.end(), t);
                    deleted += cfg.routes.onset_deleted_bump * static_cast<double>(hits);
                }

                const auto& c = idx.route[r][p];
                auto put = [&](std::size_t m, double v) { row(static_cast<Eigen::Index>(c[m])) = v; };
                put(0, std::round(routes * noise[c[0]]));
                put(1, std::round(0.93 * routes * noise[c[1]]));
                put(2, std::round(std::max(0.0, 0.04 * st.base * (1.0 + st.backup_drift)) * noise[c[2]]));
                put(3, deleted);
                put(4, std::round(1.2 * routes * noise[c[4]]));
                put(5, std::round(296.0 * routes * noise[c[5]]));
                put(6, p == 0 ? 2.0 : 1.0);
                put(7, p == 0 ? 4.0 : 3.0);
            }
        }
    }

    tel = merge_labels(tel, events, topo.nodes());
    return out;
}

SimOutput apply_mitigation(const SimState& state, std::span<const Detection> detections) {
    SimConfig cfg = state.config;
    if (cfg.mitigation == MitigationMode::off) cfg.mitigation = MitigationMode::oracle;
    if (detections.empty()) {
        // Nothing to act on: identical to the unmitigated run.
        cfg.mitigation = MitigationMode::off;
    }
    return simulate(state.topology, state.flows, state.events, cfg, detections);
}

std::vector<Detection> detections_from_flags(const FlagTable& flags) {
    std::vector<Detection> out;
    for (std::size_t n = 0; n < flags.nodes.size(); ++n) {
        bool prev = false;
        for (std::size_t t = 0; t < flags.timestamps.size(); ++t) {
            const bool cur = flags.at(t, n);
            if (cur && !prev) out.push_back({flags.nodes[n], flags.timestamps[t]});
            prev = cur;
        }
    }
    std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
        return std::tie(a.detected_at_s, a.node) < std::tie(b.detected_at_s, b.node);
    });
    return out;
}

double compute_pdr(const DeliveryLog& log, std::int64_t t0, std::int64_t t1, std::optional<std::size_t> flow) {
    std::vector<std::size_t> sel;
    if (flow) sel.push_back(*flow);
    return compute_pdr(log, t0, t1, sel);
}

double compute_pdr(const DeliveryLog& log, std::int64_t t0, std::int64_t t1, std::span<const std::size_t> flows) {
    double sent = 0, delivered = 0;
    bool overlap = false;
    for (const auto& r : log.records) {
        if (r.interval_start < t0 || r.interval_start >= t1) continue;
        if (!flows.empty() && std::find(flows.begin(), flows.end(), r.flow) == flows.end()) continue;
        overlap = true;
        sent += r.sent;
        delivered += r.delivered;
    }
    if (!overlap) throw Error("PDR window [" + std::to_string(t0) + ", " + std::to_string(t1) + ") does not overlap the delivery log");
    if (sent == 0.0) {
        log::warn("no packets sent in PDR window; reporting 1.0");
        return 1.0;
    }
    return delivered / sent;
}

// --- Files -----------------------------------------------------------------

void write_delivery_csv(const DeliveryLog& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "interval_start,flow,sent,delivered\n";
    for (const auto& r : log.records)
        out << r.interval_start << ',' << csv::escape(log.flow_names.at(r.flow)) << ',' << format_double(r.sent) << ','
            << format_double(r.delivered) << '\n';
}

DeliveryLog read_delivery_csv(const std::filesystem::path& path, std::int64_t period_s) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open delivery log " + path.string());
    std::vector<std::string> f;
    if (!csv::read_record(in, f) || f != std::vector<std::string>{"interval_start", "flow", "sent", "delivered"})
        throw Error("delivery log header must be 'interval_start,flow,sent,delivered'");
    DeliveryLog log;
    log.period_s = period_s;
    while (csv::read_record(in, f)) {
        if (f.size() == 1 && f[0].empty()) continue;
        long long t = 0;
        DeliveryRecord r;
        if (f.size() != 4 || !csv::parse_int64(f[0], t) || !csv::parse_double(f[2], r.sent) ||
            !csv::parse_double(f[3], r.delivered))
            throw Error("malformed delivery log row");
        r.interval_start = t;
        auto it = std::find(log.flow_names.begin(), log.flow_names.end(), f[1]);
        r.flow = static_cast<std::size_t>(it - log.flow_names.begin());
        if (it == log.flow_names.end()) log.flow_names.push_back(f[1]);
        log.records.push_back(r);
    }
    return log;
}

void write_events_csv(std::span<const BlackHoleEvent> events, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "node,start,duration\n";
    for (const auto& e : events) out << csv::escape(e.node) << ',' << e.start_s << ',' << e.duration_s << '\n';
}

std::vector<BlackHoleEvent> read_events_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open events file " + path.string());
    std::vector<std::string> f;
    if (!csv::read_record(in, f) || f != std::vector<std::string>{"node", "start", "duration"})
        throw Error("events header must be 'node,start,duration'");
    std::vector<BlackHoleEvent> out;
    while (csv::read_record(in, f)) {
        if (f.size() == 1 && f[0].empty()) continue;
        long long s = 0, d = 0;
        if (f.size() != 3 || !csv::parse_int64(f[1], s) || !csv::parse_int64(f[2], d) || d <= 0)
            throw Error("malformed events row");
        out.push_back({f[0], s, d, BlackHoleEvent::Kind::drop_transit});
    }
    return out;
}

// --- Scenario --------------------------------------------------------------

Scenario Scenario::from_json(const json& j, const std::filesystem::path& base_dir) {
    try {
        Scenario s;
        const auto& topo = j.contains("topology") ? j.at("topology") : json("reference");
        if (topo.is_string()) {
            const auto name = topo.get<std::string>();
            if (name == "reference")
                s.topology = build_reference_topology();
            else
                s.topology = load_topology(base_dir / name);
        } else {
            s.topology = Topology::from_json(topo);
        }

        auto& c = s.config;
        c.period_s = j.value("period_s", std::int64_t{300});
        const auto horizon = j.at("horizon").get<std::vector<std::int64_t>>();
        if (horizon.size() != 2) throw ConfigError("horizon must be [t_begin, t_end]");
        c.t_begin = horizon[0];
        c.t_end = horizon[1];
        if (c.t_end <= c.t_begin) throw ConfigError("horizon is empty");
        c.seed = j.at("seed").get<std::uint64_t>();

        for (const auto& f : j.at("flows"))
            s.flows.push_back({f.at("src").get<std::string>(), f.at("dst").get<std::string>(),
                               f.value("rate_pps", 1000.0), f.value("packet_bits", 8000.0)});

        if (j.contains("mitigation")) {
            const auto& m = j.at("mitigation");
            c.mitigation = parse_mitigation(m.value("mode", std::string("off")));
            c.hold_s = m.value("hold_s", c.hold_s);
        }
        if (j.contains("noise")) c.noise_sigma = j.at("noise").value("sigma", c.noise_sigma);
        if (j.contains("traffic")) {
            const auto& t = j.at("traffic");
            auto& tp = c.traffic;
            tp.diurnal_amplitude = t.value("diurnal_amplitude", tp.diurnal_amplitude);
            tp.peak_hour_utc = t.value("peak_hour_utc", tp.peak_hour_utc);
            tp.weekend_factor = t.value("weekend_factor", tp.weekend_factor);
            tp.jitter = t.value("jitter", tp.jitter);
            tp.unicast_share = t.value("unicast_share", tp.unicast_share);
        }
        if (j.contains("routes")) {
            const auto& r = j.at("routes");
            auto& rm = c.routes;
            rm.churn_prob = r.value("churn_prob", rm.churn_prob);
            rm.churn_mean = r.value("churn_mean", rm.churn_mean);
            rm.onset_deleted_bump = r.value("onset_deleted_bump", rm.onset_deleted_bump);
            rm.drift_sigma = r.value("drift_sigma", rm.drift_sigma);
        }

        auto& b = s.blackhole;
        b.t_begin = c.t_begin;
        b.t_end = c.t_end;
        b.period_s = c.period_s;
        s.reseed(c.seed);
        b.per_interval_prob = 0.0;
        if (j.contains("blackhole")) {
            const auto& bh = j.at("blackhole");
            b.per_interval_prob = bh.value("prob", 0.10);
            b.candidate_nodes = bh.value("nodes", std::vector<std::string>{});
            b.mean_duration_s = bh.value("duration_s", 900.0);
            b.onset_interval_s = bh.value("onset_interval_s", std::int64_t{3600});
            const auto model = bh.value("duration_model", std::string("fixed"));
            if (model == "fixed")
                b.duration_model = DurationModel::fixed;
            else if (model == "exponential")
                b.duration_model = DurationModel::exponential;
            else
                throw ConfigError("duration_model must be fixed or exponential");
            if (bh.contains("events")) {
                std::vector<BlackHoleEvent> evs;
                for (const auto& e : bh.at("events"))
                    evs.push_back({e.at("node").get<std::string>(), e.at("start").get<std::int64_t>(),
                                   e.at("duration").get<std::int64_t>(), BlackHoleEvent::Kind::drop_transit});
                s.explicit_events = std::move(evs);
            }
        }
        if (!(b.per_interval_prob >= 0.0 && b.per_interval_prob <= 1.0))
            throw ConfigError("black-hole probability must lie in [0, 1]");
        return s;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid scenario: ") + e.what());
    }
}

json Scenario::to_json() const {
    json j;
    j["topology"] = topology.to_json();
    j["period_s"] = config.period_s;
    j["horizon"] = {config.t_begin, config.t_end};
    j["seed"] = config.seed;
    j["flows"] = json::array();
    for (const auto& f : flows)
        j["flows"].push_back({{"src", f.src}, {"dst", f.dst}, {"rate_pps", f.rate_pps}, {"packet_bits", f.packet_bits}});
    j["blackhole"] = {{"prob", blackhole.per_interval_prob},
                      {"nodes", blackhole.candidate_nodes},
                      {"duration_s", blackhole.mean_duration_s},
                      {"onset_interval_s", blackhole.onset_interval_s},
                      {"duration_model", blackhole.duration_model == DurationModel::fixed ? "fixed" : "exponential"}};
    if (explicit_events) {
        j["blackhole"]["events"] = json::array();
        for (const auto& e : *explicit_events)
            j["blackhole"]["events"].push_back({{"node", e.node}, {"start", e.start_s}, {"duration", e.duration_s}});
    }
    j["mitigation"] = {{"mode", std::string(to_string(config.mitigation))}, {"hold_s", config.hold_s}};
    j["noise"] = {{"sigma", config.noise_sigma}};
    const auto& tp = config.traffic;
    j["traffic"] = {{"diurnal_amplitude", tp.diurnal_amplitude}, {"peak_hour_utc", tp.peak_hour_utc},
                    {"weekend_factor", tp.weekend_factor}, {"jitter", tp.jitter}, {"unicast_share", tp.unicast_share}};
    const auto& rm = config.routes;
    j["routes"] = {{"churn_prob", rm.churn_prob}, {"churn_mean", rm.churn_mean},
                   {"onset_deleted_bump", rm.onset_deleted_bump}, {"drift_sigma", rm.drift_sigma}};
    return j;
}

void Scenario::reseed(std::uint64_t seed) {
    config.seed = seed;
    blackhole.seed = Rng::derive(seed, "blackhole").next_u64();
}

std::vector<BlackHoleEvent> Scenario::events() const {
    if (explicit_events) return *explicit_events;
    if (blackhole.candidate_nodes.empty() || blackhole.per_interval_prob == 0.0) return {};
    return schedule_black_holes(topology, blackhole);
}

SimState Scenario::state() const { return {topology, flows, events(), config}; }

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("scenario " + path.string() + " is not valid JSON: " + e.what());
    }
    return Scenario::from_json(j, path.parent_path());
}

}  // namespace bhdetect
