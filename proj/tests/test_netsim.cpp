#include <algorithm>
#include <cmath>

#include "doctest.h"

#include "bhdetect/fixtures.hpp"
#include "bhdetect/log.hpp"
#include "bhdetect/netsim.hpp"
#include "support.hpp"

using namespace bhdetect;

namespace {

constexpr std::int64_t kT0 = kBenchmarkStart;

SimConfig quiet_config(std::int64_t intervals, std::int64_t period = 300) {
    SimConfig c;
    c.period_s = period;
    c.t_begin = kT0;
    c.t_end = kT0 + intervals * period;
    c.seed = 5;
    c.noise_sigma = 0.0;
    return c;
}

const std::vector<FlowSpec> kOneFlow{{"Client-1", "Server-1", 1000.0, 8000.0}};

std::vector<const DeliveryRecord*> records_of(const SimOutput& o, std::size_t flow) {
    std::vector<const DeliveryRecord*> out;
    for (const auto& r : o.delivery.records)
        if (r.flow == flow) out.push_back(&r);
    return out;
}

double column_sum(const SimOutput& o, std::size_t row, const std::string& node, Metric metric, ModelId model = ModelId::M2) {
    double s = 0;
    for (std::size_t j = 0; j < o.telemetry.cols(); ++j) {
        const auto d = parse_column_name(o.telemetry.columns[j]);
        if (d && d->model == model && d->metric == metric && router_of_scope(d->scope) == node)
            s += o.telemetry.values(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j));
    }
    return s;
}

}  // namespace

TEST_CASE("reference topology roles and attachments") {
    const Topology t = build_reference_topology();
    CHECK(t.nodes().size() == 8);
    CHECK(t.role("Node-1") == NodeRole::core);
    CHECK(t.role("Node-7") == NodeRole::core);
    CHECK(t.role("Node-8") == NodeRole::core);
    for (const char* n : {"Node-3", "Node-4", "Node-5", "Node-6"}) CHECK(t.role(n) == NodeRole::edge);
    for (const char* h : {"Client-1", "Client-2", "Server-1", "Server-2"}) CHECK(t.has_node(t.router_of_host(h)));

    // Connected: every router reaches every other.
    for (std::size_t a = 0; a < t.nodes().size(); ++a)
        for (std::size_t b = 0; b < t.nodes().size(); ++b) CHECK_FALSE(t.shortest_path(a, b).empty());

    const Topology back = Topology::from_json(t.to_json());
    CHECK(back.to_json() == t.to_json());
}

TEST_CASE("core nodes have detours, edge attachments do not") {
    const Topology t = build_reference_topology();
    const auto c1 = t.index_of(t.router_of_host("Client-1"));
    const auto s1 = t.index_of(t.router_of_host("Server-1"));
    for (const char* core : {"Node-1", "Node-7", "Node-8"}) {
        std::vector<bool> ex(t.nodes().size(), false);
        ex[t.index_of(core)] = true;
        CHECK_FALSE(t.shortest_path(c1, s1, ex).empty());
    }
    std::vector<bool> ex(t.nodes().size(), false);
    ex[s1] = true;
    CHECK(t.shortest_path(c1, s1, ex).empty());
}

TEST_CASE("shortest path ties go to the lexicographically smallest index sequence") {
    // Square a-b-d, a-c-d with equal weights.
    const Topology t({"a", "b", "c", "d"}, {{"a", "b"}, {"b", "d"}, {"a", "c"}, {"c", "d"}}, {},
                     {{"a", NodeRole::edge}, {"b", NodeRole::core}, {"c", NodeRole::core}, {"d", NodeRole::edge}});
    CHECK(t.shortest_path(0, 3) == std::vector<std::size_t>{0, 1, 3});
    std::vector<bool> ex{false, true, false, false};
    CHECK(t.shortest_path(0, 3, ex) == std::vector<std::size_t>{0, 2, 3});
}

TEST_CASE("schedule edge cases") {
    const Topology t = build_reference_topology();
    ScheduleParams p;
    p.candidate_nodes = {"Node-1"};
    p.t_begin = kT0;
    p.t_end = kT0 + 3600;
    p.onset_interval_s = 3600;
    p.mean_duration_s = 900;
    p.seed = 9;

    p.per_interval_prob = 0.0;
    CHECK(schedule_black_holes(t, p).empty());

    p.per_interval_prob = 1.0;
    const auto one = schedule_black_holes(t, p);
    REQUIRE(one.size() == 1);
    CHECK(one[0].node == "Node-1");
    CHECK(one[0].start_s == kT0);
    CHECK(one[0].duration_s == 900);

    p.per_interval_prob = 1.5;
    CHECK_THROWS_AS(schedule_black_holes(t, p), ConfigError);
    p.per_interval_prob = 0.5;
    p.candidate_nodes = {"Node-99"};
    CHECK_THROWS_AS(schedule_black_holes(t, p), ConfigError);
}

TEST_CASE("onset frequency matches the configured probability") {
    const Topology t = build_reference_topology();
    ScheduleParams p;
    p.per_interval_prob = 0.10;
    p.candidate_nodes = {"Node-1", "Node-7", "Node-8"};
    p.mean_duration_s = 300;  // shorter than the check interval, so no check is skipped
    p.onset_interval_s = 3600;
    p.t_begin = kT0;
    p.t_end = kT0 + 10000LL * 3600;
    p.seed = 1234;
    const auto ev = schedule_black_holes(t, p);
    for (const auto& node : p.candidate_nodes) {
        const auto k = std::count_if(ev.begin(), ev.end(), [&](const BlackHoleEvent& e) { return e.node == node; });
        // Binomial(10000, 0.1): sd = 0.003, so the 0.01 band is over 3 sd wide.
        CHECK(std::abs(static_cast<double>(k) / 10000.0 - 0.10) <= 0.01);
    }
    CHECK(schedule_black_holes(t, p) == ev);
}

TEST_CASE("no events and no noise deliver everything") {
    const Topology t = build_reference_topology();
    const auto o = simulate(t, kOneFlow, {}, quiet_config(24));
    for (const auto& r : o.delivery.records) CHECK(r.delivered == doctest::Approx(r.sent).epsilon(1e-12));
    CHECK(compute_pdr(o.delivery, kT0, kT0 + 24 * 300) == doctest::Approx(1.0));
    CHECK(o.telemetry.rows() == 24);
    REQUIRE(o.telemetry.labels);
}

TEST_CASE("an event on the only path zeroes delivery for exactly its intervals") {
    const Topology t = build_reference_topology();
    // Client-1 attaches to Node-3, so every route of the flow enters Node-3.
    const std::vector<BlackHoleEvent> ev{{"Node-3", kT0 + 5 * 300, 900}};
    const auto o = simulate(t, kOneFlow, ev, quiet_config(12));
    const auto recs = records_of(o, 0);
    REQUIRE(recs.size() == 12);
    for (std::size_t k = 0; k < 12; ++k) {
        if (k >= 5 && k < 8)
            CHECK(recs[k]->delivered == 0.0);
        else
            CHECK(recs[k]->delivered == doctest::Approx(recs[k]->sent));
        CHECK(recs[k]->delivered <= recs[k]->sent);
    }
    const auto& l = *o.telemetry.labels;
    CHECK(l.count_true(l.node_index("Node-3")) == 3);
}

TEST_CASE("an event off every flow path changes nothing") {
    const Topology t = build_reference_topology();
    const auto base = simulate(t, kOneFlow, {}, quiet_config(12));
    const std::vector<BlackHoleEvent> ev{{"Node-8", kT0 + 300, 1800}};
    const auto with = simulate(t, kOneFlow, ev, quiet_config(12));
    REQUIRE(base.delivery.records.size() == with.delivery.records.size());
    for (std::size_t i = 0; i < base.delivery.records.size(); ++i)
        CHECK(base.delivery.records[i].delivered == with.delivery.records[i].delivered);
}

TEST_CASE("simulation is deterministic") {
    const Scenario s = benchmark_scenario(3);
    SimConfig c = s.config;
    c.t_end = c.t_begin + 200 * c.period_s;
    std::vector<BlackHoleEvent> ev;
    for (const auto& e : s.events())
        if (e.start_s < c.t_end) ev.push_back(e);
    const auto a = simulate(s.topology, s.flows, ev, c);
    const auto b = simulate(s.topology, s.flows, ev, c);
    CHECK(a.telemetry.values == b.telemetry.values);
    CHECK(a.telemetry.columns == b.telemetry.columns);
    CHECK(a.delivery.records.size() == b.delivery.records.size());
    for (std::size_t i = 0; i < a.delivery.records.size(); ++i) {
        CHECK(a.delivery.records[i].sent == b.delivery.records[i].sent);
        CHECK(a.delivery.records[i].delivered == b.delivery.records[i].delivered);
    }
}

TEST_CASE("healthy routers conserve packets and black holes silence outputs") {
    const Topology t = build_reference_topology();
    const std::vector<BlackHoleEvent> ev{{"Node-1", kT0 + 4 * 300, 600}};
    const auto o = simulate(t, kOneFlow, ev, quiet_config(8));
    for (std::size_t k = 0; k < 8; ++k) {
        const double in7 = column_sum(o, k, "Node-7", Metric::input_packet_rate);
        const double out7 = column_sum(o, k, "Node-7", Metric::output_packet_rate);
        CHECK(in7 == doctest::Approx(out7));
        const double in1 = column_sum(o, k, "Node-1", Metric::input_packet_rate);
        const double out1 = column_sum(o, k, "Node-1", Metric::output_packet_rate);
        CHECK(in1 > 0.0);
        if (k == 4 || k == 5)
            CHECK(out1 == 0.0);
        else
            CHECK(out1 == doctest::Approx(in1));
    }
}

TEST_CASE("mitigation reroutes around a core black hole after one period") {
    const Topology t = build_reference_topology();
    const std::int64_t onset = kT0 + 3 * 300;
    const std::vector<BlackHoleEvent> ev{{"Node-1", onset, 900}};
    SimState st{t, kOneFlow, ev, quiet_config(10)};
    st.config.mitigation = MitigationMode::oracle;
    const std::vector<Detection> det{{"Node-1", onset + 300}};
    const auto with = apply_mitigation(st, det);
    const auto recs = records_of(with, 0);
    CHECK(recs[3]->delivered == 0.0);
    CHECK(recs[4]->delivered == 0.0);
    CHECK(recs[5]->delivered == doctest::Approx(recs[5]->sent));
    const auto& path5 = with.route_trace[5].path;
    CHECK(std::find(path5.begin(), path5.end(), "Node-1") == path5.end());

    SimConfig off = st.config;
    off.mitigation = MitigationMode::off;
    const auto without = simulate(t, kOneFlow, ev, off);
    CHECK(compute_pdr(with.delivery, onset, onset + 900) > compute_pdr(without.delivery, onset, onset + 900));
}

TEST_CASE("mitigation cannot help at an edge router") {
    const Topology t = build_reference_topology();
    const std::vector<BlackHoleEvent> ev{{"Node-5", kT0 + 300, 900}};
    SimState st{t, kOneFlow, ev, quiet_config(8)};
    st.config.mitigation = MitigationMode::oracle;
    const auto with = apply_mitigation(st, std::vector<Detection>{{"Node-5", kT0 + 300}});
    SimConfig off = st.config;
    off.mitigation = MitigationMode::off;
    const auto without = simulate(t, kOneFlow, ev, off);
    CHECK(compute_pdr(with.delivery, kT0 + 300, kT0 + 1200) == compute_pdr(without.delivery, kT0 + 300, kT0 + 1200));
}

TEST_CASE("empty detections reproduce the unmitigated run") {
    const Topology t = build_reference_topology();
    const std::vector<BlackHoleEvent> ev{{"Node-1", kT0 + 300, 900}};
    SimState st{t, kOneFlow, ev, quiet_config(8)};
    st.config.mitigation = MitigationMode::detector_feed;
    const auto with = apply_mitigation(st, {});
    SimConfig off = st.config;
    off.mitigation = MitigationMode::off;
    const auto without = simulate(t, kOneFlow, ev, off);
    CHECK(with.telemetry.values == without.telemetry.values);
}

TEST_CASE("unknown detections are ignored with a warning") {
    const Topology t = build_reference_topology();
    SimState st{t, kOneFlow, {}, quiet_config(4)};
    st.config.mitigation = MitigationMode::detector_feed;
    std::vector<std::string> warnings;
    log::ScopedSink sink([&](const std::string& m) { warnings.push_back(m); });
    CHECK_NOTHROW(apply_mitigation(st, std::vector<Detection>{{"Node-42", kT0}}));
    CHECK_FALSE(warnings.empty());
}

TEST_CASE("pdr arithmetic") {
    DeliveryLog log;
    log.period_s = 300;
    log.flow_names = {"f"};
    log.records = {{0, 0, 1000.0, 870.0}};
    CHECK(compute_pdr(log, 0, 300) == doctest::Approx(0.87));
    CHECK_THROWS_AS(compute_pdr(log, 600, 900), Error);
    log.records = {{0, 0, 0.0, 0.0}};
    std::vector<std::string> warnings;
    log::ScopedSink sink([&](const std::string& m) { warnings.push_back(m); });
    CHECK(compute_pdr(log, 0, 300) == 1.0);
    CHECK(warnings.size() == 1);
}

TEST_CASE("half-covered window of a single-path flow has PDR near one half") {
    const Topology t = build_reference_topology();
    const std::vector<BlackHoleEvent> ev{{"Node-3", kT0 + 6 * 300, 6 * 300}};
    SimConfig c = quiet_config(12);
    c.traffic.jitter = 0.0;
    c.traffic.diurnal_amplitude = 0.0;
    const auto o = simulate(t, kOneFlow, ev, c);
    CHECK(compute_pdr(o.delivery, kT0, kT0 + 12 * 300) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("detections from flags mark the first row of each run") {
    FlagTable f({0, 300, 600, 900, 1200}, {"A", "B"});
    for (std::size_t t : {1, 2, 4}) f.set(t, 0, true);
    f.set(0, 1, true);
    const auto d = detections_from_flags(f);
    REQUIRE(d.size() == 3);
    CHECK(d[0] == Detection{"B", 0});
    CHECK(d[1] == Detection{"A", 300});
    CHECK(d[2] == Detection{"A", 1200});
}

TEST_CASE("delivery and event files round-trip") {
    const auto dir = bhtest::scratch_dir("netsim-io");
    const Topology t = build_reference_topology();
    const std::vector<BlackHoleEvent> ev{{"Node-3", kT0 + 300, 600}, {"Node-7", kT0 + 900, 300}};
    const auto o = simulate(t, kOneFlow, ev, quiet_config(6));
    write_delivery_csv(o.delivery, dir / "d.csv");
    write_events_csv(ev, dir / "e.csv");
    const auto back = read_delivery_csv(dir / "d.csv", 300);
    REQUIRE(back.records.size() == o.delivery.records.size());
    for (std::size_t i = 0; i < back.records.size(); ++i) {
        CHECK(back.records[i].sent == o.delivery.records[i].sent);
        CHECK(back.records[i].delivered == o.delivery.records[i].delivered);
    }
    CHECK(read_events_csv(dir / "e.csv") == ev);
}

TEST_CASE("bundled scenario files match the built-in scenarios") {
    CHECK(load_scenario(bhtest::data_dir() / "benchmark_scenario.json").to_json() == benchmark_scenario().to_json());
    CHECK(load_scenario(bhtest::data_dir() / "pdr_scenario.json").to_json() == pdr_scenario().to_json());
}

TEST_CASE("scenario parsing and reseeding") {
    nlohmann::json j = benchmark_scenario().to_json();
    const Scenario s = Scenario::from_json(j);
    CHECK(s.events() == benchmark_scenario().events());

    Scenario r = s;
    r.reseed(8);
    CHECK(r.config.seed == 8);
    CHECK(r.events() != s.events());
    CHECK(r.to_json() == benchmark_scenario(8).to_json());

    j.erase("seed");
    CHECK_THROWS_AS(Scenario::from_json(j), ConfigError);
    CHECK_THROWS_AS(load_scenario("/nonexistent/scenario.json"), ConfigError);
}

TEST_CASE("benchmark scenario black-hole share is near ten percent") {
    const Scenario s = benchmark_scenario();
    const auto ev = s.events();
    std::int64_t covered = 0;
    for (const auto& e : ev) covered += e.duration_s;
    const double span = static_cast<double>(s.config.t_end - s.config.t_begin) * 3.0;
    CHECK(static_cast<double>(covered) / span == doctest::Approx(0.10).epsilon(0.1));
}
