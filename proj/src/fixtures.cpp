#include "bhdetect/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "bhdetect/rng.hpp"

namespace bhdetect {

namespace {

// Stationary AR(1) with unit marginal variance.
std::vector<double> ar1(Rng& rng, std::size_t n, double phi) {
    std::vector<double> z(n);
    const double scale = std::sqrt(1.0 - phi * phi);
    double x = rng.normal();
    for (auto& v : z) {
        v = x;
        x = phi * x + scale * rng.normal();
    }
    return z;
}

std::vector<double> white(Rng& rng, std::size_t n) {
    std::vector<double> z(n);
    for (auto& v : z) v = rng.normal();
    return z;
}

}  // namespace

TelemetryDataset make_redundancy_fixture(std::uint64_t seed, std::size_t rows, std::int64_t t_begin,
                                         std::int64_t period_s) {
    if (rows < 2) throw ConfigError("fixture needs at least two rows");
    if (period_s <= 0) throw ConfigError("period must be positive");
    constexpr std::size_t kInterfaces = 14;
    constexpr std::size_t kSymmetric = 11;   // output tracks input
    constexpr std::size_t kFirstSparse = 12; // mostly idle
    const std::vector<std::string> routers{"Core-A", "Core-B", "Core-C", "Core-D", "Core-E"};
    const std::vector<std::string> protocols{"BGP", "ISIS"};
    constexpr double kCapacityKbps = 40000.0;
    constexpr double kShare = 0.85;
    constexpr double kMeas = 0.002;

    std::vector<std::string> iface_scope(kInterfaces);
    std::vector<SensorCatalog> parts;
    for (std::size_t r = 0; r < routers.size(); ++r) {
        std::vector<std::string> names;
        for (std::size_t k = r; k < kInterfaces; k += routers.size()) {
            names.push_back("Bundle-Ether" + std::to_string(k + 1) + ".100");
            iface_scope[k] = routers[r] + "/" + names.back();
        }
        parts.push_back(build_sensor_catalog(names, protocols, routers[r]));
    }
    const SensorCatalog catalog = SensorCatalog::merge(parts);

    TelemetryDataset ds;
    ds.period_s = period_s;
    ds.columns = catalog.column_names();
    ds.node_of_column = infer_nodes(ds.columns);
    ds.values = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(ds.columns.size()));
    for (std::size_t i = 0; i < rows; ++i) ds.timestamps.push_back(t_begin + static_cast<std::int64_t>(i) * period_s);

    std::map<std::string, std::size_t> where;
    for (std::size_t j = 0; j < ds.columns.size(); ++j) where[ds.columns[j]] = j;
    auto put = [&](ModelId m, const std::string& scope, Metric metric, const std::vector<double>& v) {
        const auto j = where.at(SensorDescriptor{m, scope, metric}.column_name());
        for (std::size_t i = 0; i < rows; ++i) ds.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i];
    };

    Rng rng = Rng::derive(seed, "redundancy-fixture");
    auto measured = [&](const std::vector<double>& truth, double gain) {
        std::vector<double> v(rows);
        for (std::size_t i = 0; i < rows; ++i) v[i] = gain * truth[i] * (1.0 + kMeas * rng.normal());
        return v;
    };

    for (std::size_t k = 0; k < kInterfaces; ++k) {
        const std::string& scope = iface_scope[k];
        const auto zi = ar1(rng, rows, 0.9);
        std::vector<double> in_pkt(rows), out_pkt(rows);
        if (k == kSymmetric) {
            const auto c = white(rng, rows);
            for (std::size_t i = 0; i < rows; ++i) {
                in_pkt[i] = 2000.0 * std::exp(0.3 * zi[i]);
                out_pkt[i] = 0.5 * in_pkt[i] * (1.0 + 0.05 * c[i]);
            }
        } else {
            const auto zo = ar1(rng, rows, 0.9);
            for (std::size_t i = 0; i < rows; ++i) {
                in_pkt[i] = 2000.0 * std::exp(0.3 * zi[i]);
                out_pkt[i] = 1800.0 * std::exp(0.3 * zo[i]);
            }
        }
        if (k >= kFirstSparse) {
            for (std::size_t i = 0; i < rows; ++i)
                if (!(rng.uniform() < 0.04)) in_pkt[i] = out_pkt[i] = 0.0;
        }
        std::vector<double> in_kbps(rows), out_kbps(rows);
        for (std::size_t i = 0; i < rows; ++i) {
            in_kbps[i] = in_pkt[i] * 8.0 * (1.0 + kMeas * rng.normal());
            out_kbps[i] = out_pkt[i] * 8.0 * (1.0 + kMeas * rng.normal());
        }
        const std::array<std::pair<Metric, const std::vector<double>*>, 4> truth{
            std::pair{Metric::input_data_rate, &in_kbps}, std::pair{Metric::input_packet_rate, &in_pkt},
            std::pair{Metric::output_data_rate, &out_kbps}, std::pair{Metric::output_packet_rate, &out_pkt}};
        for (const auto& [metric, v] : truth) {
            put(ModelId::M2, scope, metric, measured(*v, 1.0));
            put(ModelId::M1, scope, metric, measured(*v, kShare));
        }
        put(ModelId::M2, scope, Metric::input_load, measured(in_kbps, 255.0 / kCapacityKbps));
        put(ModelId::M2, scope, Metric::output_load, measured(out_kbps, 255.0 / kCapacityKbps));
    }

    for (const auto& router : routers) {
        for (std::size_t p = 0; p < protocols.size(); ++p) {
            const ModelId model = p == 0 ? ModelId::M3 : ModelId::M4;
            const std::string scope = router + "/" + protocols[p];
            const auto za = ar1(rng, rows, 0.9);
            const auto ze = ar1(rng, rows, 0.9);
            const auto zb = ar1(rng, rows, 0.9);
            const auto zr = ar1(rng, rows, 0.9);
            const auto zc = ar1(rng, rows, 0.9);
            std::vector<double> active(rows), memory(rows), routes(rows), paths(rows), backup(rows), deleted(rows),
                redist(rows), clients(rows);
            for (std::size_t i = 0; i < rows; ++i) {
                // active and memory correlate at about 0.8; routes follows their sum.
                const double zm = 0.8 * za[i] + 0.6 * ze[i];
                active[i] = std::round(930.0 * std::exp(0.1 * za[i]));
                memory[i] = std::round(296000.0 * std::exp(0.1 * zm));
                routes[i] = std::round(1000.0 * std::exp(0.1 * (za[i] + zm) / std::sqrt(3.6)));
                paths[i] = std::round(1.2 * routes[i] * (1.0 + 0.001 * rng.normal()));
                backup[i] = std::round(40.0 * std::exp(0.2 * zb[i]));
                deleted[i] = rng.uniform() < 0.03 ? std::round(rng.exponential(25.0)) + 1.0 : 0.0;
                redist[i] = std::round(5.0 * std::exp(0.3 * zr[i]));
                clients[i] = std::round(8.0 * std::exp(0.25 * zc[i]));
            }
            put(model, scope, Metric::routes_count, routes);
            put(model, scope, Metric::active_routes_count, active);
            put(model, scope, Metric::backup_routes_count, backup);
            put(model, scope, Metric::deleted_routes_count, deleted);
            put(model, scope, Metric::paths_count, paths);
            put(model, scope, Metric::protocol_route_memory, memory);
            put(model, scope, Metric::redistribution_client_count, redist);
            put(model, scope, Metric::protocol_clients_count, clients);
        }
    }
    ds.validate();
    return ds;
}

namespace {

std::vector<FlowSpec> reference_flows() {
    // The two studied client/server flows in both directions plus lighter
    // background traffic between every other host pair.
    const std::vector<std::string> hosts{"Client-1", "Client-2", "Server-1", "Server-2"};
    std::vector<FlowSpec> flows{{"Client-1", "Server-1", 1200.0, 8000.0},
                                {"Server-1", "Client-1", 900.0, 8000.0},
                                {"Client-2", "Server-2", 1200.0, 8000.0},
                                {"Server-2", "Client-2", 900.0, 8000.0}};
    for (const auto& a : hosts)
        for (const auto& b : hosts) {
            if (a == b) continue;
            const bool main = std::any_of(flows.begin(), flows.begin() + 4,
                                          [&](const FlowSpec& f) { return f.src == a && f.dst == b; });
            if (!main) flows.push_back({a, b, 400.0, 8000.0});
        }
    return flows;
}

}  // namespace

Scenario benchmark_scenario(std::uint64_t seed) {
    Scenario s;
    s.topology = build_reference_topology();
    s.flows = reference_flows();
    auto& c = s.config;
    c.period_s = 300;
    c.t_begin = kBenchmarkStart;
    c.t_end = kBenchmarkStart + static_cast<std::int64_t>(kBenchmarkRows) * c.period_s;
    auto& b = s.blackhole;
    b.per_interval_prob = 0.10;
    b.candidate_nodes = {"Node-1", "Node-7", "Node-8"};
    b.mean_duration_s = 900.0;
    b.onset_interval_s = 900;
    b.t_begin = c.t_begin;
    b.t_end = c.t_end;
    b.period_s = c.period_s;
    s.reseed(seed);
    return s;
}

Scenario pdr_scenario(std::uint64_t seed) {
    Scenario s;
    s.topology = build_reference_topology();
    s.flows = reference_flows();
    auto& c = s.config;
    c.period_s = 60;
    c.t_begin = kBenchmarkStart;
    c.t_end = kBenchmarkStart + 3 * 3600;
    c.mitigation = MitigationMode::oracle;
    auto& b = s.blackhole;
    b.t_begin = c.t_begin;
    b.t_end = c.t_end;
    b.period_s = c.period_s;
    b.per_interval_prob = 0.0;
    s.reseed(seed);
    s.explicit_events = std::vector<BlackHoleEvent>{
        {"Node-1", kBenchmarkStart + 1800, 900, BlackHoleEvent::Kind::drop_transit},
        {"Node-8", kBenchmarkStart + 5400, 900, BlackHoleEvent::Kind::drop_transit},
        {"Node-7", kBenchmarkStart + 9000, 300, BlackHoleEvent::Kind::drop_transit}};
    return s;
}

}  // namespace bhdetect
