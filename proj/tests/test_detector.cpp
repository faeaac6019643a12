#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"

#include "bhdetect/detector.hpp"
#include "bhdetect/fixtures.hpp"
#include "bhdetect/netsim.hpp"
#include "support.hpp"

using namespace bhdetect;

namespace {

Matrix rows_of(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& r : rows) {
        Eigen::Index j = 0;
        for (double v : r) m(i, j++) = v;
        ++i;
    }
    return m;
}

// Partition as a set of row sets, plus the noise set, independent of numbering.
using Partition = std::pair<std::set<std::set<std::size_t>>, std::set<std::size_t>>;

Partition partition_of(const std::vector<int>& labels, const std::vector<std::size_t>& row_ids) {
    std::map<int, std::set<std::size_t>> groups;
    std::set<std::size_t> noise;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0)
            noise.insert(row_ids[i]);
        else
            groups[labels[i]].insert(row_ids[i]);
    }
    Partition p;
    p.second = noise;
    for (auto& [k, g] : groups) p.first.insert(g);
    return p;
}

std::vector<std::size_t> iota_ids(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

// Node-1 features from a short simulation, standardized over all rows.
struct NodeFixture {
    FeatureMatrix standardized;
    std::int64_t t0 = 0;
};

NodeFixture node1_fixture(const std::vector<BlackHoleEvent>& events, std::size_t intervals, bool flat_load) {
    const Topology t = build_reference_topology();
    SimConfig c;
    c.t_begin = kBenchmarkStart;
    c.t_end = c.t_begin + static_cast<std::int64_t>(intervals) * 300;
    c.seed = 21;
    if (flat_load) {
        c.traffic.diurnal_amplitude = 0.0;
        c.traffic.weekend_factor = 1.0;
        c.traffic.jitter = 0.0;
    }
    // Both directions, so Node-1's interfaces carry input and output and the
    // per-interface I/O ratio spikes when it stops forwarding.
    const std::vector<FlowSpec> flows{{"Client-1", "Server-1", 1200.0, 8000.0}, {"Server-1", "Client-1", 900.0, 8000.0},
                                      {"Client-2", "Server-2", 900.0, 8000.0}, {"Server-2", "Client-2", 1200.0, 8000.0}};
    const auto out = simulate(t, flows, events, c);
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < out.telemetry.cols(); ++j)
        if (out.telemetry.node_of_column[j] == "Node-1") cols.push_back(j);
    const auto ds = out.telemetry.select_columns(cols);
    const auto bh = run_bhmm_pipeline(ds);
    // Over a couple of days week_of_year is constant; keep sensors and ratios.
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < bh.matrix.cols(); ++j)
        if (bh.matrix.provenance[j] != Provenance::temporal) keep.push_back(j);
    const auto m = bh.matrix.select_columns(keep);
    return {Standardizer::fit(m).apply(m), c.t_begin};
}

// A couple of days of traffic is a single regime, so the validity indices
// are undefined and tuning has nothing to choose from; these radius and
// density values sit well inside the nominal cloud.
const DbscanParams kShortRunParams{3.0, 10};

}  // namespace

TEST_CASE("standardizer uses population statistics") {
    const std::vector<std::string> cols{"x"};
    const Matrix train = rows_of({{1}, {2}, {3}});
    const auto s = Standardizer::fit(train, cols);
    const Matrix z = s.apply(train);
    CHECK(z(0, 0) == doctest::Approx(-1.224744871391589).epsilon(1e-12));
    CHECK(z(1, 0) == doctest::Approx(0.0));
    CHECK(z(2, 0) == doctest::Approx(1.224744871391589).epsilon(1e-12));
    CHECK(s.apply(rows_of({{2}}))(0, 0) == 0.0);
}

TEST_CASE("standardized training data has zero mean and unit std") {
    bhdetect::Rng rng(1);
    Matrix x(300, 4);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < 4; ++j) x(i, j) = 50.0 * rng.normal() + static_cast<double>(j) * 1e3;
    const std::vector<std::string> cols{"a", "b", "c", "d"};
    const Matrix z = Standardizer::fit(x, cols).apply(x);
    for (Eigen::Index j = 0; j < 4; ++j) {
        const double mean = z.col(j).mean();
        const double var = (z.col(j).array() - mean).square().mean();
        CHECK(std::abs(mean) < 1e-12);
        CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-12);
    }
}

TEST_CASE("standardizer rejects zero-variance columns by name") {
    const std::vector<std::string> cols{"ok", "flat"};
    CHECK_THROWS_WITH_AS(Standardizer::fit(rows_of({{1, 5}, {2, 5}}), cols), doctest::Contains("flat"), Error);
}

TEST_CASE("affine rescaling of raw columns leaves DBSCAN unchanged") {
    bhdetect::Rng rng(77);
    Matrix x(120, 3);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = rng.normal() + 4.0 * static_cast<double>(i % 3 == j);
    Matrix scaled = x;
    for (Eigen::Index j = 0; j < 3; ++j)
        scaled.col(j) = (scaled.col(j).array() * (3.0 + static_cast<double>(j)) - 17.0).matrix();
    const std::vector<std::string> cols{"a", "b", "c"};
    const Matrix a = Standardizer::fit(x, cols).apply(x);
    const Matrix b = Standardizer::fit(scaled, cols).apply(scaled);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(dbscan(a, {0.5, 3}).labels == dbscan(b, {0.5, 3}).labels);
}

TEST_CASE("dbscan on the four-point example") {
    const Matrix p = rows_of({{0, 0}, {0, 0.1}, {0.1, 0}, {5, 5}});
    const auto a = dbscan(p, {0.5, 3});
    CHECK(a.labels == std::vector<int>{0, 0, 0, -1});
    CHECK(a.n_clusters == 1);
    CHECK(a.noise_count() == 1);
}

TEST_CASE("dbscan limit cases") {
    const auto inst = bhtest::random_dbscan_instances(5, 2)[1];
    const auto n = static_cast<std::size_t>(inst.points.rows());
    const auto all = dbscan(inst.points, {1e9, n});
    CHECK(all.n_clusters == 1);
    CHECK(all.noise_count() == 0);
    const auto none = dbscan(inst.points, {1e9, n + 1});
    CHECK(none.n_clusters == 0);
    CHECK(none.noise_count() == n);
}

TEST_CASE("dbscan boundary is inclusive and the point counts itself") {
    const Matrix p = rows_of({{0}, {1}, {2}});
    CHECK(dbscan(p, {1.0, 3}).labels == std::vector<int>{0, 0, 0});  // middle is core
    CHECK(dbscan(p, {0.999, 2}).noise_count() == 3);
    CHECK(dbscan(p, {0.5, 1}).n_clusters == 3);
}

TEST_CASE("dbscan rejects bad input") {
    CHECK_THROWS_AS(dbscan(rows_of({{0}}), {0.0, 1}), ConfigError);
    CHECK_THROWS_AS(dbscan(rows_of({{0}}), {1.0, 0}), ConfigError);
    CHECK_THROWS_AS(dbscan(rows_of({{std::nan("")}}), {1.0, 1}), Error);
    CHECK_THROWS_AS(dbscan(Matrix(0, 2), {1.0, 1}), Error);
}

TEST_CASE("dbscan matches the exhaustive oracle") {
    for (const auto& inst : bhtest::random_dbscan_instances(2024, 60)) {
        const auto got = dbscan(inst.points, {inst.eps, inst.min_pts});
        const auto want = bhtest::brute_force_dbscan(inst.points, inst.eps, inst.min_pts);
        CHECK(got.labels == want);
        const auto via = dbscan_precomputed(pairwise_sq_distances(inst.points), {inst.eps, inst.min_pts});
        CHECK(via.labels == want);
    }
}

TEST_CASE("dbscan partition is invariant to row order") {
    bhdetect::Rng rng(99);
    for (const auto& inst : bhtest::random_dbscan_instances(31, 20)) {
        const auto n = static_cast<std::size_t>(inst.points.rows());
        std::vector<std::size_t> perm = iota_ids(n);
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
        Matrix shuffled(inst.points.rows(), inst.points.cols());
        for (std::size_t i = 0; i < n; ++i)
            shuffled.row(static_cast<Eigen::Index>(i)) = inst.points.row(static_cast<Eigen::Index>(perm[i]));
        const auto a = dbscan(inst.points, {inst.eps, inst.min_pts});
        const auto b = dbscan(shuffled, {inst.eps, inst.min_pts});
        // Border points reachable from two clusters may legitimately switch,
        // so compare core partitions and the noise set.
        std::vector<int> ca = a.labels, cb = b.labels;
        for (std::size_t i = 0; i < n; ++i) {
            if (!a.core_flags[i] && ca[i] >= 0) ca[i] = -2;
            if (!b.core_flags[i] && cb[i] >= 0) cb[i] = -2;
        }
        auto strip = [](std::vector<int> l, const std::vector<std::size_t>& ids) {
            std::vector<int> core;
            std::vector<std::size_t> core_ids;
            std::set<std::size_t> noise;
            for (std::size_t i = 0; i < l.size(); ++i) {
                if (l[i] >= 0) {
                    core.push_back(l[i]);
                    core_ids.push_back(ids[i]);
                } else if (l[i] == -1) {
                    noise.insert(ids[i]);
                }
            }
            return std::pair{partition_of(core, core_ids).first, noise};
        };
        CHECK(strip(ca, iota_ids(n)) == strip(cb, perm));
    }
}

TEST_CASE("silhouette of the two-pair example") {
    const Matrix p = rows_of({{0}, {1}, {10}, {11}});
    const std::vector<int> l{0, 0, 1, 1};
    const double expected = ((1.0 - 1.0 / 10.5) + (1.0 - 1.0 / 9.5)) / 2.0;
    CHECK(silhouette_score(p, l) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs(silhouette_score(p, l) - 0.8997) < 1e-3);
    CHECK(silhouette_score_precomputed(pairwise_sq_distances(p), l) == doctest::Approx(expected));
}

TEST_CASE("silhouette edge cases") {
    const Matrix p = rows_of({{0}, {1}, {10}, {11}, {50}});
    CHECK_THROWS_WITH_AS(silhouette_score(p, std::vector<int>{0, 0, 0, 0, -1}), doctest::Contains("silhouette undefined"), Error);
    // Noise is ignored; a singleton cluster scores 0.
    const double with_noise = silhouette_score(p, std::vector<int>{0, 0, 1, 1, -1});
    CHECK(with_noise == doctest::Approx(((1.0 - 1.0 / 10.5) + (1.0 - 1.0 / 9.5)) / 2.0));
    const double s = silhouette_score(p, std::vector<int>{0, 0, 1, 1, 2});
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
    // Tight blobs far apart approach one.
    const Matrix far = rows_of({{0}, {0.001}, {1000}, {1000.001}});
    CHECK(silhouette_score(far, std::vector<int>{0, 0, 1, 1}) > 0.999);
}

TEST_CASE("davies-bouldin examples") {
    const Matrix p = rows_of({{0}, {1}, {10}, {11}});
    const std::vector<int> l{0, 0, 1, 1};
    CHECK(std::abs(davies_bouldin_score(p, l) - 0.1) < 1e-6);

    // Moving the clusters k times farther apart divides the index by k.
    const Matrix q = rows_of({{0}, {1}, {40}, {41}});
    CHECK(davies_bouldin_score(q, l) == doctest::Approx(0.1 * 10.0 / 40.0).epsilon(1e-12));

    const Matrix tight = rows_of({{2}, {2}, {7}, {7}});
    CHECK(davies_bouldin_score(tight, l) == 0.0);

    const Matrix same = rows_of({{0}, {2}, {1}, {1}});
    CHECK_THROWS_AS(davies_bouldin_score(same, l), Error);
    CHECK_THROWS_AS(davies_bouldin_score(p, std::vector<int>{0, 0, 0, -1}), Error);
}

TEST_CASE("single-cell grid selects that cell") {
    const Matrix p = rows_of({{0}, {0.1}, {0.2}, {10}, {10.1}, {10.2}});
    TuningGrid g{{0.5}, {2}, 3, 1.0};
    const auto r = tune_on_standardized(p, g);
    CHECK(r.selected == DbscanParams{0.5, 2});
    REQUIRE(r.cells.size() == 1);
    CHECK(r.cells[0].valid);
    CHECK(r.cells[0].n_clusters == 2);
}

TEST_CASE("identical-scoring cells resolve to the smaller parameters") {
    const Matrix p = rows_of({{0}, {0.01}, {0.02}, {100}, {100.01}, {100.02}});
    TuningGrid g{{2.0, 1.0}, {3, 2}, 3, 1.0};
    const auto r = tune_on_standardized(p, g);
    CHECK(r.selected == DbscanParams{1.0, 2});
    CHECK(std::is_sorted(r.cells.begin(), r.cells.end(),
                         [](const TuningCell& a, const TuningCell& b) { return a.params < b.params; }));
}

TEST_CASE("grids with no valid cell are rejected") {
    const Matrix p = rows_of({{0}, {1}, {2}});
    TuningGrid g{{10.0}, {1}, 3, 1.0};  // one cluster only
    CHECK_THROWS_AS(tune_on_standardized(p, g), Error);
    TuningGrid empty{{}, {1}, 3, 1.0};
    CHECK_THROWS_AS(tune_on_standardized(p, empty), ConfigError);
}

TEST_CASE("noise cap marks cells invalid") {
    const Matrix p = rows_of({{0}, {0.1}, {0.2}, {10}, {10.1}, {10.2}, {50}});
    TuningGrid g{{0.5}, {2}, 1, 0.1};  // 1/7 noise exceeds 10%
    CHECK_THROWS_AS(tune_on_standardized(p, g), Error);
    g.max_noise_fraction = 0.2;
    CHECK(tune_on_standardized(p, g).cells[0].noise_fraction == doctest::Approx(1.0 / 7.0));
}

TEST_CASE("tuning selects a wide radius on dense, spread-out blobs") {
    // Three overlapping-tail blobs in 10-D, like a node's feature subset:
    // after standardization the nearest-neighbor spacing is large, so small
    // radii shatter the blobs into noise and the stable partition needs eps
    // above 0.8.
    bhdetect::Rng rng(17);
    const Eigen::Index per = 250, d = 10;
    Matrix x(3 * per, d);
    for (Eigen::Index b = 0; b < 3; ++b)
        for (Eigen::Index i = 0; i < per; ++i)
            for (Eigen::Index k = 0; k < d; ++k)
                x(b * per + i, k) = 6.0 * static_cast<double>(b == k % 3) + rng.normal();
    std::vector<std::string> cols;
    for (Eigen::Index k = 0; k < d; ++k) cols.push_back("f" + std::to_string(k));
    const Matrix z = Standardizer::fit(x, cols).apply(x);
    TuningGrid g{{0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.5, 2.0, 2.5, 3.0}, {5, 10, 20}, 3, 0.02};
    const auto r = tune_on_standardized(z, g);
    CHECK(r.selected.eps > 0.8);
    CHECK(dbscan(z, r.selected).n_clusters == 3);
}

TEST_CASE("tuning report JSON round-trips") {
    const Matrix p = rows_of({{0}, {0.1}, {0.2}, {10}, {10.1}, {10.2}});
    const auto r = tune_on_standardized(p, {{0.5, 1.0}, {2, 3}, 2, 1.0});
    CHECK(TuningReport::from_json(r.to_json()).to_json() == r.to_json());
}

TEST_CASE("detector flags a three-interval black hole at the transit node") {
    const std::int64_t onset = kBenchmarkStart + 300 * 300;
    const auto fx = node1_fixture({{"Node-1", onset, 900}}, 576, false);
    DetectConfig cfg;
    cfg.nodes = {"Node-1"};
    cfg.params = kShortRunParams;
    const auto flags = detect_black_holes(fx.standardized, cfg);
    for (std::size_t k = 300; k < 303; ++k) CHECK(flags.at(k, 0));
    CHECK(flags.count_true(0) <= 3 + 576 / 50);
}

TEST_CASE("clean traffic stays within the false-positive budget") {
    const auto fx = node1_fixture({}, 576, false);
    DetectConfig cfg;
    cfg.nodes = {"Node-1"};
    cfg.params = kShortRunParams;
    const auto flags = detect_black_holes(fx.standardized, cfg);
    CHECK(static_cast<double>(flags.count_true(0)) / 576.0 <= 0.02);
}

TEST_CASE("a single black-hole interval under flat load is flagged") {
    const std::int64_t onset = kBenchmarkStart + 100 * 300;
    const auto fx = node1_fixture({{"Node-1", onset, 300}}, 288, true);
    DetectConfig cfg;
    cfg.nodes = {"Node-1"};
    cfg.params = kShortRunParams;
    const auto flags = detect_black_holes(fx.standardized, cfg);
    CHECK(flags.at(100, 0));
}

TEST_CASE("detection modes") {
    FeatureMatrix m;
    m.column_names = {"M2.A/e.input_packet_rate", "M2.B/e.input_packet_rate", "M2.B/e.output_packet_rate"};
    m.provenance = {Provenance::raw_sensor, Provenance::raw_sensor, Provenance::raw_sensor};
    m.node_of_column = {"A", "B", "B"};
    const Eigen::Index n = 40;
    m.values = Matrix::Zero(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        m.timestamps.push_back(i * 300);
        m.values(i, 0) = 0.01 * static_cast<double>(i % 5);
        m.values(i, 1) = 0.01 * static_cast<double>(i % 3);
        m.values(i, 2) = 0.01 * static_cast<double>(i % 4);
    }
    m.values(7, 0) = 9.0;   // outlier on A only
    m.values(20, 2) = 9.0;  // outlier in one B column

    DetectConfig cfg;
    cfg.params = {0.5, 3};
    auto f = detect_black_holes(m, cfg);
    REQUIRE(f.nodes == std::vector<std::string>{"A", "B"});
    CHECK(f.at(7, 0));
    CHECK_FALSE(f.at(7, 1));
    CHECK(f.at(20, 1));
    CHECK(f.count_true(0) == 1);
    CHECK(f.count_true(1) == 1);

    cfg.mode = DetectMode::per_feature;
    f = detect_black_holes(m, cfg);
    CHECK(f.at(20, 1));
    CHECK(f.count_true(1) == 1);

    cfg.mode = DetectMode::whole_matrix;
    f = detect_black_holes(m, cfg);
    CHECK(f.at(7, 0));
    CHECK(f.at(7, 1));
    CHECK(f.at(20, 0));

    cfg.mode = DetectMode::per_node;
    cfg.nodes = {"C"};
    CHECK_THROWS_AS(detect_black_holes(m, cfg), Error);

    cfg.nodes = {"A", "B"};
    cfg.per_node["A"] = {20.0, 3};
    f = detect_black_holes(m, cfg);
    CHECK(f.count_true(0) == 0);
}
