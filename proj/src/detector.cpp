#include "bhdetect/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace bhdetect {

using nlohmann::json;

namespace {

class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (a < b) std::swap(a, b);
        parent_[a] = b;  // the smaller index becomes the root
    }

private:
    std::vector<std::size_t> parent_;
};

void check_finite(const Matrix& m) {
    if (!m.allFinite()) throw Error("DBSCAN input contains non-finite values");
}

// Visits every unordered pair i < j with |xi - xj|^2 <= eps^2. Distances are
// taken from a blocked Gram product; pairs whose estimate lies within the
// rounding band of the threshold are re-evaluated exactly.
template <class Visit>
void for_each_close_pair(const Matrix& x, double eps, Visit&& visit) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    const double eps2 = eps * eps;
    const Vector sq = x.rowwise().squaredNorm();
    const double band = static_cast<double>(2 * d + 8) * std::numeric_limits<double>::epsilon();
    constexpr Eigen::Index kBlock = 512;

    Matrix gram;
    for (Eigen::Index i0 = 0; i0 < n; i0 += kBlock) {
        const Eigen::Index bi = std::min(kBlock, n - i0);
        for (Eigen::Index j0 = i0; j0 < n; j0 += kBlock) {
            const Eigen::Index bj = std::min(kBlock, n - j0);
            gram.noalias() = x.middleRows(i0, bi) * x.middleRows(j0, bj).transpose();
            for (Eigen::Index a = 0; a < bi; ++a) {
                const Eigen::Index i = i0 + a;
                const double si = sq(i);
                const double* g = gram.row(a).data();
                for (Eigen::Index b = (j0 == i0 ? a + 1 : 0); b < bj; ++b) {
                    const Eigen::Index j = j0 + b;
                    const double est = si + sq(j) - 2.0 * g[b];
                    const double tol = band * (si + sq(j));
                    if (est > eps2 + tol) continue;
                    if (est < eps2 - tol || (x.row(i) - x.row(j)).squaredNorm() <= eps2)
                        visit(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
                }
            }
        }
    }
}

template <class ForEachPair>
ClusterAssignment assemble(std::size_t n, std::size_t min_pts, ForEachPair&& pairs) {
    std::vector<std::size_t> counts(n, 1);
    pairs([&](std::size_t i, std::size_t j) {
        ++counts[i];
        ++counts[j];
    });

    ClusterAssignment out;
    out.core_flags.assign(n, 0);
    bool any_core = false;
    for (std::size_t i = 0; i < n; ++i)
        if (counts[i] >= min_pts) out.core_flags[i] = 1, any_core = true;
    out.labels.assign(n, -1);
    if (!any_core) return out;

    UnionFind uf(n);
    std::vector<std::vector<std::size_t>> border_links(n);
    pairs([&](std::size_t i, std::size_t j) {
        const bool ci = out.core_flags[i] != 0;
        const bool cj = out.core_flags[j] != 0;
        if (ci && cj)
            uf.unite(i, j);
        else if (ci)
            border_links[j].push_back(i);
        else if (cj)
            border_links[i].push_back(j);
    });

    std::vector<int> id_of_root(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        if (!out.core_flags[i]) continue;
        const std::size_t r = uf.find(i);
        if (id_of_root[r] < 0) id_of_root[r] = out.n_clusters++;
        out.labels[i] = id_of_root[r];
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (out.core_flags[i]) continue;
        int best = -1;
        for (std::size_t c : border_links[i])
            if (best < 0 || out.labels[c] < best) best = out.labels[c];
        out.labels[i] = best;
    }
    return out;
}

struct LabelIndex {
    std::vector<int> cluster_ids;  // sorted distinct non-noise labels
    std::vector<int> dense;        // per row: position in cluster_ids, -1 for noise
    std::vector<std::size_t> sizes;
};

LabelIndex index_labels(std::span<const int> labels) {
    LabelIndex li;
    std::set<int> ids;
    for (int l : labels)
        if (l >= 0) ids.insert(l);
    li.cluster_ids.assign(ids.begin(), ids.end());
    li.sizes.assign(li.cluster_ids.size(), 0);
    li.dense.reserve(labels.size());
    for (int l : labels) {
        if (l < 0) {
            li.dense.push_back(-1);
            continue;
        }
        const auto k = static_cast<int>(std::lower_bound(li.cluster_ids.begin(), li.cluster_ids.end(), l) -
                                        li.cluster_ids.begin());
        li.dense.push_back(k);
        ++li.sizes[static_cast<std::size_t>(k)];
    }
    return li;
}

template <class Dist>
double silhouette_impl(std::size_t n, std::span<const int> labels, Dist&& dist) {
    if (labels.size() != n) throw Error("label count does not match the number of rows");
    const LabelIndex li = index_labels(labels);
    const std::size_t k = li.cluster_ids.size();
    if (k < 2) throw Error("silhouette undefined: fewer than two clusters");

    Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < n; ++i) {
        if (li.dense[i] < 0) continue;
        for (std::size_t j = i + 1; j < n; ++j) {
            if (li.dense[j] < 0) continue;
            const double dij = dist(i, j);
            sums(static_cast<Eigen::Index>(i), li.dense[j]) += dij;
            sums(static_cast<Eigen::Index>(j), li.dense[i]) += dij;
        }
    }
    double total = 0.0;
    std::size_t scored = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int own = li.dense[i];
        if (own < 0) continue;
        ++scored;
        const std::size_t own_size = li.sizes[static_cast<std::size_t>(own)];
        if (own_size < 2) continue;  // singleton scores 0
        const double a = sums(static_cast<Eigen::Index>(i), own) / static_cast<double>(own_size - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            if (static_cast<int>(c) == own) continue;
            b = std::min(b, sums(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) /
                                static_cast<double>(li.sizes[c]));
        }
        const double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    return total / static_cast<double>(scored);
}

}  // namespace

// --- Parameters ------------------------------------------------------------

void DbscanParams::validate() const {
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (min_pts < 1) throw ConfigError("min_pts must be at least 1");
}

std::size_t ClusterAssignment::noise_count() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), -1));
}

// --- Standardizer ----------------------------------------------------------

Standardizer Standardizer::fit(const Matrix& train, std::span<const std::string> columns) {
    if (train.rows() == 0) throw Error("cannot fit a standardizer on zero rows");
    if (static_cast<std::size_t>(train.cols()) != columns.size())
        throw Error("standardizer column names do not match the matrix");
    Standardizer s;
    s.columns_.assign(columns.begin(), columns.end());
    s.mean_ = train.colwise().mean().transpose();
    s.std_.resize(train.cols());
    for (Eigen::Index j = 0; j < train.cols(); ++j) {
        const double var = (train.col(j).array() - s.mean_(j)).square().mean();
        s.std_(j) = std::sqrt(var);
        if (!(s.std_(j) > 0.0))
            throw Error("column '" + s.columns_[static_cast<std::size_t>(j)] +
                        "' has zero standard deviation in the training rows");
    }
    return s;
}

Standardizer Standardizer::fit(const FeatureMatrix& train) { return fit(train.values, train.column_names); }

Matrix Standardizer::apply(const Matrix& m) const {
    if (m.cols() != mean_.size()) throw Error("standardizer applied to a matrix of the wrong width");
    Matrix out = m;
    out.rowwise() -= mean_.transpose();
    out.array().rowwise() /= std_.transpose().array();
    return out;
}

FeatureMatrix Standardizer::apply(const FeatureMatrix& m) const {
    if (m.column_names != columns_) throw Error("standardizer columns do not match the feature matrix");
    FeatureMatrix out = m;
    out.values = apply(m.values);
    return out;
}

// --- DBSCAN ----------------------------------------------------------------

ClusterAssignment dbscan(const Matrix& points, const DbscanParams& params) {
    params.validate();
    if (points.rows() == 0) throw Error("DBSCAN needs at least one row");
    check_finite(points);

    // Keep the neighbor pairs from the first sweep when they fit in memory;
    // otherwise the second pass recomputes them.
    constexpr std::size_t kMaxCachedPairs = std::size_t{1} << 26;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> cached;
    bool overflow = points.rows() > static_cast<Eigen::Index>(UINT32_MAX);
    bool first = true;
    return assemble(static_cast<std::size_t>(points.rows()), params.min_pts, [&](auto&& visit) {
        if (first) {
            first = false;
            for_each_close_pair(points, params.eps, [&](std::size_t i, std::size_t j) {
                if (!overflow) {
                    if (cached.size() < kMaxCachedPairs)
                        cached.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
                    else
                        overflow = true, cached.clear(), cached.shrink_to_fit();
                }
                visit(i, j);
            });
        } else if (!overflow) {
            for (const auto& [i, j] : cached) visit(i, j);
        } else {
            for_each_close_pair(points, params.eps, visit);
        }
    });
}

Matrix pairwise_sq_distances(const Matrix& points) {
    const Eigen::Index n = points.rows();
    Matrix d(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d(i, i) = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = (points.row(i) - points.row(j)).squaredNorm();
            d(i, j) = v;
            d(j, i) = v;
        }
    }
    return d;
}

ClusterAssignment dbscan_precomputed(const Matrix& sq_dist, const DbscanParams& params) {
    params.validate();
    if (sq_dist.rows() == 0 || sq_dist.rows() != sq_dist.cols()) throw Error("distance matrix must be square and non-empty");
    const double eps2 = params.eps * params.eps;
    const auto n = static_cast<std::size_t>(sq_dist.rows());
    return assemble(n, params.min_pts, [&](auto&& visit) {
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = sq_dist.row(static_cast<Eigen::Index>(i)).data();
            for (std::size_t j = i + 1; j < n; ++j)
                if (row[j] <= eps2) visit(i, j);
        }
    });
}

// --- Validity indices ------------------------------------------------------

double silhouette_score(const Matrix& points, std::span<const int> labels) {
    return silhouette_impl(static_cast<std::size_t>(points.rows()), labels, [&](std::size_t i, std::size_t j) {
        return (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).norm();
    });
}

double silhouette_score_precomputed(const Matrix& sq_dist, std::span<const int> labels) {
    return silhouette_impl(static_cast<std::size_t>(sq_dist.rows()), labels, [&](std::size_t i, std::size_t j) {
        return std::sqrt(sq_dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    });
}

double davies_bouldin_score(const Matrix& points, std::span<const int> labels) {
    if (labels.size() != static_cast<std::size_t>(points.rows()))
        throw Error("label count does not match the number of rows");
    const LabelIndex li = index_labels(labels);
    const std::size_t k = li.cluster_ids.size();
    if (k < 2) throw Error("Davies-Bouldin undefined: fewer than two clusters");

    Matrix centroids = Matrix::Zero(static_cast<Eigen::Index>(k), points.cols());
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (li.dense[i] >= 0) centroids.row(li.dense[i]) += points.row(static_cast<Eigen::Index>(i));
    for (std::size_t c = 0; c < k; ++c) centroids.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(li.sizes[c]);

    Vector sigma = Vector::Zero(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (li.dense[i] >= 0)
            sigma(li.dense[i]) += (points.row(static_cast<Eigen::Index>(i)) - centroids.row(li.dense[i])).norm();
    for (std::size_t c = 0; c < k; ++c) sigma(static_cast<Eigen::Index>(c)) /= static_cast<double>(li.sizes[c]);

    double total = 0.0;
    for (Eigen::Index a = 0; a < static_cast<Eigen::Index>(k); ++a) {
        double worst = 0.0;
        for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(k); ++b) {
            if (a == b) continue;
            const double sep = (centroids.row(a) - centroids.row(b)).norm();
            if (!(sep > 0.0))
                throw Error("Davies-Bouldin undefined: clusters " + std::to_string(li.cluster_ids[a]) + " and " +
                            std::to_string(li.cluster_ids[b]) + " share a centroid");
            worst = std::max(worst, (sigma(a) + sigma(b)) / sep);
        }
        total += worst;
    }
    return total / static_cast<double>(k);
}

// --- Tuning ----------------------------------------------------------------

void TuningGrid::validate() const {
    if (eps.empty() || min_pts.empty()) throw ConfigError("tuning grid must list at least one eps and one min_pts");
    for (double e : eps)
        if (!(e > 0.0)) throw ConfigError("grid eps values must be positive");
    for (auto m : min_pts)
        if (m < 1) throw ConfigError("grid min_pts values must be at least 1");
    if (rounds < 1) throw ConfigError("tuning rounds must be at least 1");
    if (!(max_noise_fraction > 0.0 && max_noise_fraction <= 1.0))
        throw ConfigError("max_noise_fraction must lie in (0, 1]");
}

bool better_cell(const TuningCell& a, const TuningCell& b) {
    if (a.valid != b.valid) return a.valid;
    if (a.valid) {
        if (a.davies_bouldin != b.davies_bouldin) return a.davies_bouldin < b.davies_bouldin;
        if (a.silhouette != b.silhouette) return a.silhouette > b.silhouette;
    }
    return a.params < b.params;
}

TuningReport tune_on_standardized(const Matrix& validation, const TuningGrid& grid) {
    grid.validate();
    if (validation.rows() < 2) throw Error("tuning needs at least two validation rows");
    check_finite(validation);
    const Matrix dist = pairwise_sq_distances(validation);
    const double n = static_cast<double>(validation.rows());

    std::map<DbscanParams, TuningCell> cache;
    auto evaluate = [&](const DbscanParams& p) -> const TuningCell& {
        auto it = cache.find(p);
        if (it != cache.end()) return it->second;
        TuningCell cell;
        cell.params = p;
        const ClusterAssignment ca = dbscan_precomputed(dist, p);
        cell.n_clusters = ca.n_clusters;
        cell.noise_fraction = static_cast<double>(ca.noise_count()) / n;
        if (ca.n_clusters < 2) {
            cell.reason = "fewer than two clusters";
        } else if (cell.noise_fraction > grid.max_noise_fraction) {
            cell.reason = "noise fraction above limit";
        } else {
            try {
                cell.silhouette = silhouette_score_precomputed(dist, ca.labels);
                cell.davies_bouldin = davies_bouldin_score(validation, ca.labels);
                cell.valid = true;
            } catch (const Error& e) {
                cell.reason = e.what();
            }
        }
        return cache.emplace(p, cell).first->second;
    };

    TuningReport report;
    DbscanParams cur{grid.eps.front(), grid.min_pts.front()};
    for (int round = 0; round < grid.rounds; ++round) {
        const DbscanParams before = cur;

        const TuningCell* best = nullptr;
        for (double e : grid.eps) {
            const TuningCell& c = evaluate({e, cur.min_pts});
            if (c.valid && (!best || better_cell(c, *best))) best = &c;
        }
        if (best) cur.eps = best->params.eps;

        best = nullptr;
        for (auto m : grid.min_pts) {
            const TuningCell& c = evaluate({cur.eps, m});
            if (c.valid && (!best || better_cell(c, *best))) best = &c;
        }
        if (best) cur.min_pts = best->params.min_pts;

        report.path.push_back(cur);
        if (cur == before) break;
    }

    if (!evaluate(cur).valid) {
        // The descent never reached a valid cell; fall back to the best one anywhere in the grid.
        for (double e : grid.eps)
            for (auto m : grid.min_pts) evaluate({e, m});
        const TuningCell* best = nullptr;
        for (const auto& [p, c] : cache)
            if (c.valid && (!best || better_cell(c, *best))) best = &c;
        if (!best) throw Error("every tuning grid cell is invalid (no configuration yields two or more clusters)");
        cur = best->params;
    }
    report.selected = cur;
    for (const auto& [p, c] : cache) report.cells.push_back(c);
    return report;
}

TuningReport tune_hyperparameters(const FeatureMatrix& train, const FeatureMatrix& validation,
                                  const TuningGrid& grid) {
    const Standardizer s = Standardizer::fit(train);
    return tune_on_standardized(s.apply(validation).values, grid);
}

json TuningReport::to_json() const {
    json j;
    j["selected"] = {{"eps", selected.eps}, {"min_pts", selected.min_pts}};
    j["path"] = json::array();
    for (const auto& p : path) j["path"].push_back({{"eps", p.eps}, {"min_pts", p.min_pts}});
    j["cells"] = json::array();
    for (const auto& c : cells) {
        json e = {{"eps", c.params.eps}, {"min_pts", c.params.min_pts}, {"valid", c.valid},
                  {"n_clusters", c.n_clusters}, {"noise_fraction", c.noise_fraction}};
        if (c.valid) {
            e["silhouette"] = c.silhouette;
            e["davies_bouldin"] = c.davies_bouldin;
        } else {
            e["reason"] = c.reason;
        }
        j["cells"].push_back(std::move(e));
    }
    return j;
}

TuningReport TuningReport::from_json(const json& j) {
    TuningReport r;
    r.selected = {j.at("selected").at("eps").get<double>(), j.at("selected").at("min_pts").get<std::size_t>()};
    for (const auto& p : j.at("path")) r.path.push_back({p.at("eps").get<double>(), p.at("min_pts").get<std::size_t>()});
    for (const auto& e : j.at("cells")) {
        TuningCell c;
        c.params = {e.at("eps").get<double>(), e.at("min_pts").get<std::size_t>()};
        c.valid = e.at("valid").get<bool>();
        c.n_clusters = e.at("n_clusters").get<int>();
        c.noise_fraction = e.at("noise_fraction").get<double>();
        if (c.valid) {
            c.silhouette = e.at("silhouette").get<double>();
            c.davies_bouldin = e.at("davies_bouldin").get<double>();
        } else {
            c.reason = e.value("reason", "");
        }
        r.cells.push_back(std::move(c));
    }
    return r;
}

// --- Detection -------------------------------------------------------------

std::string_view to_string(DetectMode m) {
    switch (m) {
        case DetectMode::per_node: return "per_node";
        case DetectMode::per_feature: return "per_feature";
        case DetectMode::whole_matrix: return "whole_matrix";
    }
    return "?";
}

DetectMode parse_detect_mode(std::string_view s) {
    if (s == "per_node") return DetectMode::per_node;
    if (s == "per_feature") return DetectMode::per_feature;
    if (s == "whole_matrix") return DetectMode::whole_matrix;
    throw ConfigError("unknown detection mode '" + std::string(s) + "'");
}

const DbscanParams& DetectConfig::params_for(const std::string& node) const {
    auto it = per_node.find(node);
    return it == per_node.end() ? params : it->second;
}

std::vector<std::size_t> node_feature_columns(const FeatureMatrix& m, const std::string& node) {
    std::vector<std::size_t> idx;
    bool own = false;
    for (std::size_t j = 0; j < m.cols(); ++j) {
        if (m.node_of_column[j] == node) {
            idx.push_back(j);
            own = true;
        } else if (m.provenance[j] == Provenance::temporal) {
            idx.push_back(j);
        }
    }
    if (!own) throw Error("node '" + node + "' has no feature columns");
    return idx;
}

FlagTable detect_black_holes(const FeatureMatrix& m, const DetectConfig& config) {
    m.validate();
    std::vector<std::string> nodes = config.nodes;
    if (nodes.empty()) {
        std::set<std::string> s;
        for (const auto& n : m.node_of_column)
            if (!n.empty()) s.insert(n);
        nodes.assign(s.begin(), s.end());
    }
    if (nodes.empty()) throw Error("feature matrix has no per-node columns to run detection on");

    FlagTable flags(m.timestamps, nodes);
    auto submatrix = [&](std::span<const std::size_t> cols) {
        Matrix sub(m.values.rows(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t k = 0; k < cols.size(); ++k)
            sub.col(static_cast<Eigen::Index>(k)) = m.values.col(static_cast<Eigen::Index>(cols[k]));
        return sub;
    };
    auto mark = [&](std::size_t node, const ClusterAssignment& ca) {
        for (std::size_t t = 0; t < ca.labels.size(); ++t)
            if (ca.labels[t] < 0) flags.set(t, node, true);
    };

    if (config.mode == DetectMode::whole_matrix) {
        const ClusterAssignment ca = dbscan(m.values, config.params);
        for (std::size_t n = 0; n < nodes.size(); ++n) mark(n, ca);
        return flags;
    }
    for (std::size_t n = 0; n < nodes.size(); ++n) {
        const auto cols = node_feature_columns(m, nodes[n]);
        const DbscanParams& p = config.params_for(nodes[n]);
        if (config.mode == DetectMode::per_node) {
            mark(n, dbscan(submatrix(cols), p));
        } else {
            for (std::size_t c : cols) {
                if (m.provenance[c] == Provenance::temporal) continue;
                mark(n, dbscan(submatrix(std::span(&c, 1)), p));
            }
        }
    }
    return flags;
}

json flags_to_json(const FlagTable& flags) {
    json j;
    j["nodes"] = flags.nodes;
    j["n_timestamps"] = flags.timestamps.size();
    json det = json::object();
    for (std::size_t n = 0; n < flags.nodes.size(); ++n) {
        json ts = json::array();
        for (std::size_t t = 0; t < flags.timestamps.size(); ++t)
            if (flags.at(t, n)) ts.push_back(flags.timestamps[t]);
        det[flags.nodes[n]] = std::move(ts);
    }
    j["flagged"] = std::move(det);
    return j;
}

}  // namespace bhdetect
