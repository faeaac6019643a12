#include "bhdetect/bhmm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

namespace bhdetect {

using nlohmann::json;

namespace {

constexpr std::string_view kMinute = "minute";
constexpr std::string_view kWeek = "week_of_year";
constexpr std::string_view kWeekday = "day_of_week";
constexpr std::string_view kRatioPrefix = "I/O ";

std::vector<std::size_t> complement(std::size_t n, const std::vector<bool>& drop) {
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < n; ++j)
        if (!drop[j]) keep.push_back(j);
    return keep;
}

FeatureMatrix append_column(const FeatureMatrix& m, std::vector<std::pair<std::string, Vector>> extra,
                            Provenance prov) {
    FeatureMatrix out;
    out.timestamps = m.timestamps;
    out.column_names = m.column_names;
    out.provenance = m.provenance;
    out.node_of_column = m.node_of_column;
    out.values.resize(static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols() + extra.size()));
    if (m.cols() > 0) out.values.leftCols(static_cast<Eigen::Index>(m.cols())) = m.values;
    for (std::size_t k = 0; k < extra.size(); ++k) {
        out.values.col(static_cast<Eigen::Index>(m.cols() + k)) = extra[k].second;
        out.node_of_column.push_back(
            prov == Provenance::temporal ? std::string() : infer_nodes(std::span(&extra[k].first, 1)).front());
        out.column_names.push_back(std::move(extra[k].first));
        out.provenance.push_back(prov);
    }
    return out;
}

}  // namespace

std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::raw_sensor: return "raw_sensor";
        case Provenance::temporal: return "temporal";
        case Provenance::io_ratio: return "io_ratio";
    }
    return "?";
}

Provenance infer_provenance(std::string_view column) {
    if (column == kMinute || column == kWeek || column == kWeekday) return Provenance::temporal;
    if (column.starts_with(kRatioPrefix)) return Provenance::io_ratio;
    return Provenance::raw_sensor;
}

// --- FeatureMatrix ---------------------------------------------------------

void FeatureMatrix::validate() const {
    if (static_cast<std::size_t>(values.rows()) != timestamps.size() ||
        static_cast<std::size_t>(values.cols()) != column_names.size() || provenance.size() != column_names.size() ||
        node_of_column.size() != column_names.size())
        throw Error("feature matrix dimensions are inconsistent");
    std::set<std::string_view> seen;
    for (const auto& c : column_names)
        if (!seen.insert(c).second) throw Error("duplicate feature column " + c);
    if (!values.allFinite()) throw Error("feature values must be finite");
}

FeatureMatrix FeatureMatrix::from_dataset(const TelemetryDataset& ds) {
    FeatureMatrix m;
    m.timestamps = ds.timestamps;
    m.column_names = ds.columns;
    m.values = ds.values;
    m.node_of_column = ds.node_of_column;
    for (const auto& c : ds.columns) m.provenance.push_back(infer_provenance(c));
    return m;
}

TelemetryDataset FeatureMatrix::to_dataset(std::int64_t period_s) const {
    TelemetryDataset ds;
    ds.timestamps = timestamps;
    ds.period_s = period_s;
    ds.columns = column_names;
    ds.values = values;
    ds.node_of_column = node_of_column;
    return ds;
}

FeatureMatrix FeatureMatrix::select_columns(std::span<const std::size_t> idx) const {
    FeatureMatrix out;
    out.timestamps = timestamps;
    out.values.resize(values.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out.column_names.push_back(column_names.at(idx[k]));
        out.provenance.push_back(provenance.at(idx[k]));
        out.node_of_column.push_back(node_of_column.at(idx[k]));
        out.values.col(static_cast<Eigen::Index>(k)) = values.col(static_cast<Eigen::Index>(idx[k]));
    }
    return out;
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> idx) const {
    FeatureMatrix out;
    out.column_names = column_names;
    out.provenance = provenance;
    out.node_of_column = node_of_column;
    out.values.resize(static_cast<Eigen::Index>(idx.size()), values.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out.timestamps.push_back(timestamps.at(idx[k]));
        out.values.row(static_cast<Eigen::Index>(k)) = values.row(static_cast<Eigen::Index>(idx[k]));
    }
    return out;
}

std::size_t FeatureMatrix::column_index(std::string_view name) const {
    return static_cast<std::size_t>(std::find(column_names.begin(), column_names.end(), name) - column_names.begin());
}

// --- Steps 1 and 2 ---------------------------------------------------------

ConstantDropResult drop_constant_features(const FeatureMatrix& m) {
    if (m.rows() == 0 || m.cols() == 0) throw Error("feature matrix is empty");
    std::vector<bool> drop(m.cols(), false);
    ConstantDropResult res;
    bool any_informative = false;
    for (std::size_t j = 0; j < m.cols(); ++j) {
        if (m.provenance[j] == Provenance::temporal) continue;
        const auto col = m.values.col(static_cast<Eigen::Index>(j));
        if (col.minCoeff() == col.maxCoeff()) {
            drop[j] = true;
            res.dropped.push_back(m.column_names[j]);
        } else {
            any_informative = true;
        }
    }
    if (!any_informative) throw Error("no informative features remain: every sensor column is constant");
    res.matrix = m.select_columns(complement(m.cols(), drop));
    return res;
}

SparseDropResult drop_sparse_features(const FeatureMatrix& m, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("sparse threshold must lie in (0, 1]");
    std::vector<bool> drop(m.cols(), false);
    SparseDropResult res;
    const double n = static_cast<double>(m.rows());
    for (std::size_t j = 0; j < m.cols(); ++j) {
        if (m.provenance[j] == Provenance::temporal || m.rows() == 0) continue;
        const auto zeros = (m.values.col(static_cast<Eigen::Index>(j)).array() == 0.0).count();
        const double frac = static_cast<double>(zeros) / n;
        if (frac >= threshold) {
            drop[j] = true;
            res.dropped.push_back({m.column_names[j], frac});
        }
    }
    res.matrix = m.select_columns(complement(m.cols(), drop));
    return res;
}

// --- Step 3 ----------------------------------------------------------------

CalendarFields calendar_fields(std::int64_t epoch_seconds) {
    using namespace std::chrono;
    const sys_seconds tp{seconds{epoch_seconds}};
    const sys_days day = floor<days>(tp);
    const auto secs_of_day = (tp - day).count();

    CalendarFields f;
    f.minute_of_day = static_cast<int>(secs_of_day / 60);
    f.iso_weekday = static_cast<int>(weekday{day}.iso_encoding());

    // The ISO week belongs to the year holding that week's Thursday.
    const sys_days thursday = day + days{4 - f.iso_weekday};
    const year_month_day ymd{thursday};
    const sys_days jan1 = sys_days{ymd.year() / January / 1};
    f.iso_week = static_cast<int>((thursday - jan1).count() / 7 + 1);
    return f;
}

FeatureMatrix add_temporal_features(const FeatureMatrix& m, std::vector<std::string>* added) {
    const auto n = static_cast<Eigen::Index>(m.rows());
    Vector minute(n), week(n), weekday(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto f = calendar_fields(m.timestamps[static_cast<std::size_t>(i)]);
        minute(i) = f.minute_of_day;
        week(i) = f.iso_week;
        weekday(i) = f.iso_weekday;
    }
    std::vector<std::pair<std::string, Vector>> extra;
    for (auto& [name, col] : {std::pair{kMinute, minute}, std::pair{kWeek, week}, std::pair{kWeekday, weekday}}) {
        if (m.column_index(name) != m.cols()) continue;
        extra.emplace_back(std::string(name), col);
        if (added) added->emplace_back(name);
    }
    return append_column(m, std::move(extra), Provenance::temporal);
}

// --- Step 4 ----------------------------------------------------------------

RatioResult add_io_ratio_features(const FeatureMatrix& m) {
    RatioResult res;
    std::map<std::tuple<ModelId, std::string, std::string>, std::size_t> inputs, outputs;
    for (std::size_t j = 0; j < m.cols(); ++j) {
        if (m.provenance[j] != Provenance::raw_sensor) continue;
        auto d = parse_column_name(m.column_names[j]);
        if (!d) continue;
        const std::string metric(to_string(d->metric));
        if (metric.starts_with("input_"))
            inputs[{d->model, d->scope, metric.substr(6)}] = j;
        else if (metric.starts_with("output_"))
            outputs[{d->model, d->scope, metric.substr(7)}] = j;
    }

    std::vector<std::pair<std::string, Vector>> extra;
    for (const auto& [key, in_col] : inputs) {
        auto it = outputs.find(key);
        if (it == outputs.end()) {
            res.unpaired.push_back(m.column_names[in_col]);
            continue;
        }
        const auto& [model, scope, quantity] = key;
        std::string name = std::string(kRatioPrefix) + std::string(to_string(model)) + "." + scope + "." + quantity;
        if (m.column_index(name) != m.cols()) continue;
        const auto num = m.values.col(static_cast<Eigen::Index>(in_col));
        const auto den = m.values.col(static_cast<Eigen::Index>(it->second)).cwiseMax(kRatioEpsilon);
        res.added.push_back({m.column_names[in_col], m.column_names[it->second], name});
        extra.emplace_back(std::move(name), num.cwiseQuotient(den));
    }
    for (const auto& [key, out_col] : outputs)
        if (!inputs.contains(key)) res.unpaired.push_back(m.column_names[out_col]);
    std::sort(res.unpaired.begin(), res.unpaired.end());

    res.matrix = append_column(m, std::move(extra), Provenance::io_ratio);
    return res;
}

// --- Step 5 ----------------------------------------------------------------

Matrix pearson_correlation_matrix(const FeatureMatrix& m) {
    if (m.rows() < 2) throw Error("correlation needs at least two rows");
    const auto n = static_cast<Eigen::Index>(m.rows());
    const auto p = static_cast<Eigen::Index>(m.cols());
    for (Eigen::Index j = 0; j < p; ++j) {
        const auto col = m.values.col(j);
        if (col.minCoeff() == col.maxCoeff())
            throw Error("zero-variance column '" + m.column_names[static_cast<std::size_t>(j)] +
                        "' in correlation input; drop constant features first");
    }
    Eigen::MatrixXd centered = m.values;
    const Eigen::RowVectorXd mean = centered.colwise().mean();
    centered.rowwise() -= mean;
    Eigen::VectorXd norm = centered.colwise().norm();
    for (Eigen::Index j = 0; j < p; ++j) {
        if (!(norm(j) > 0.0))
            throw Error("zero-variance column '" + m.column_names[static_cast<std::size_t>(j)] + "' in correlation input");
        centered.col(j) /= norm(j);
    }
    (void)n;
    Eigen::MatrixXd r = centered.transpose() * centered;
    Matrix out(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
        out(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < p; ++j) {
            const double v = std::clamp(r(i, j), -1.0, 1.0);
            out(i, j) = v;
            out(j, i) = v;
        }
    }
    return out;
}

int representative_rank(std::string_view column) {
    if (column.starts_with(kRatioPrefix)) return column.ends_with(".packet_rate") ? 0 : 1;
    const auto dot = column.rfind('.');
    const auto metric = parse_metric(dot == std::string_view::npos ? column : column.substr(dot + 1));
    if (!metric) return 1;
    switch (*metric) {
        case Metric::input_packet_rate:
        case Metric::output_packet_rate:
        case Metric::active_routes_count:
        case Metric::protocol_route_memory: return 0;
        default: return 1;
    }
}

PruneResult prune_correlated(const FeatureMatrix& m, const Matrix& corr, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("correlation threshold must lie in (0, 1)");
    if (static_cast<std::size_t>(corr.rows()) != m.cols() || static_cast<std::size_t>(corr.cols()) != m.cols())
        throw Error("correlation matrix does not match the feature matrix");

    struct Cand {
        double abs_r;
        std::size_t i, j;
    };
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < m.cols(); ++i) {
        if (m.provenance[i] == Provenance::temporal) continue;
        for (std::size_t j = i + 1; j < m.cols(); ++j) {
            if (m.provenance[j] == Provenance::temporal) continue;
            const double r = corr(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            if (std::abs(r) > threshold) cands.push_back({std::abs(r), i, j});
        }
    }
    std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
        if (a.abs_r != b.abs_r) return a.abs_r > b.abs_r;
        return std::tie(m.column_names[a.i], m.column_names[a.j]) < std::tie(m.column_names[b.i], m.column_names[b.j]);
    });

    auto preferred = [&](std::size_t a, std::size_t b) {
        const int ra = representative_rank(m.column_names[a]);
        const int rb = representative_rank(m.column_names[b]);
        if (ra != rb) return ra < rb;
        return m.column_names[a] < m.column_names[b];
    };

    PruneResult res;
    std::vector<bool> drop(m.cols(), false);
    for (const auto& c : cands) {
        const double r = corr(static_cast<Eigen::Index>(c.i), static_cast<Eigen::Index>(c.j));
        res.pairs.push_back({m.column_names[c.i], m.column_names[c.j], r});
        if (drop[c.i] || drop[c.j]) continue;
        const bool keep_i = preferred(c.i, c.j);
        const std::size_t kept = keep_i ? c.i : c.j;
        const std::size_t removed = keep_i ? c.j : c.i;
        drop[removed] = true;
        res.pruned.push_back({m.column_names[removed], m.column_names[kept], r});
    }
    res.matrix = m.select_columns(complement(m.cols(), drop));
    return res;
}

// --- Pipeline --------------------------------------------------------------

BhmmResult run_bhmm_pipeline(const TelemetryDataset& dataset, const BhmmParams& params) {
    dataset.validate();
    if (!(params.corr_threshold > 0.0 && params.corr_threshold < 1.0))
        throw ConfigError("correlation threshold must lie in (0, 1)");
    if (!(params.sparse_threshold > 0.0 && params.sparse_threshold <= 1.0))
        throw ConfigError("sparse threshold must lie in (0, 1]");

    BhmmResult out;
    auto& rep = out.report;
    rep.sparse_threshold = params.sparse_threshold;
    rep.corr_threshold = params.corr_threshold;
    rep.input_columns = dataset.columns;

    FeatureMatrix m = FeatureMatrix::from_dataset(dataset);
    auto constant = drop_constant_features(m);
    rep.dropped_constant = std::move(constant.dropped);
    auto sparse = drop_sparse_features(constant.matrix, params.sparse_threshold);
    rep.dropped_sparse = std::move(sparse.dropped);
    m = add_temporal_features(sparse.matrix, &rep.added_temporal);
    auto ratios = add_io_ratio_features(m);
    rep.added_ratio = std::move(ratios.added);
    rep.unpaired_io = std::move(ratios.unpaired);

    // Ratio columns can be constant (e.g. an interface whose output never
    // moves); they carry no information and would break the correlation step.
    std::vector<std::size_t> informative;
    for (std::size_t j = 0; j < ratios.matrix.cols(); ++j) {
        const auto col = ratios.matrix.values.col(static_cast<Eigen::Index>(j));
        if (ratios.matrix.provenance[j] == Provenance::io_ratio && col.minCoeff() == col.maxCoeff()) {
            rep.dropped_constant.push_back(ratios.matrix.column_names[j]);
            continue;
        }
        informative.push_back(j);
    }
    m = ratios.matrix.select_columns(informative);

    // Temporal columns are excluded from the correlation input entirely.
    std::vector<std::size_t> non_temporal;
    for (std::size_t j = 0; j < m.cols(); ++j)
        if (m.provenance[j] != Provenance::temporal) non_temporal.push_back(j);
    const FeatureMatrix sub = m.select_columns(non_temporal);
    auto pruned = prune_correlated(sub, pearson_correlation_matrix(sub), params.corr_threshold);
    rep.correlation_pairs = std::move(pruned.pairs);
    rep.pruned = std::move(pruned.pruned);

    std::set<std::string> removed;
    for (const auto& p : rep.pruned) removed.insert(p.removed);
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < m.cols(); ++j)
        if (!removed.contains(m.column_names[j])) keep.push_back(j);
    out.matrix = m.select_columns(keep);
    rep.final_columns = out.matrix.column_names;
    out.matrix.validate();
    return out;
}

// --- Report serialization --------------------------------------------------

json BhmmReport::to_json() const {
    json j;
    j["params"] = {{"sparse_threshold", sparse_threshold}, {"corr_threshold", corr_threshold}};
    j["input_columns"] = input_columns;
    j["dropped_constant"] = dropped_constant;
    j["dropped_sparse"] = json::array();
    for (const auto& d : dropped_sparse) j["dropped_sparse"].push_back({{"column", d.column}, {"zero_fraction", d.zero_fraction}});
    j["added_temporal"] = added_temporal;
    j["added_ratio"] = json::array();
    for (const auto& r : added_ratio)
        j["added_ratio"].push_back({{"numerator", r.numerator}, {"denominator", r.denominator}, {"column", r.column}});
    j["unpaired_io"] = unpaired_io;
    j["correlation_pairs"] = json::array();
    for (const auto& p : correlation_pairs) j["correlation_pairs"].push_back({{"a", p.a}, {"b", p.b}, {"r", p.r}});
    j["pruned"] = json::array();
    for (const auto& p : pruned) j["pruned"].push_back({{"removed", p.removed}, {"kept", p.kept}, {"r", p.r}});
    j["final_columns"] = final_columns;
    j["counts"] = {{"input", input_columns.size()},
                   {"dropped_constant", dropped_constant.size()},
                   {"dropped_sparse", dropped_sparse.size()},
                   {"added_temporal", added_temporal.size()},
                   {"added_ratio", added_ratio.size()},
                   {"pruned", pruned.size()},
                   {"final", final_columns.size()}};
    return j;
}

BhmmReport BhmmReport::from_json(const json& j) {
    BhmmReport r;
    r.sparse_threshold = j.at("params").at("sparse_threshold").get<double>();
    r.corr_threshold = j.at("params").at("corr_threshold").get<double>();
    r.input_columns = j.at("input_columns").get<std::vector<std::string>>();
    r.dropped_constant = j.at("dropped_constant").get<std::vector<std::string>>();
    for (const auto& d : j.at("dropped_sparse"))
        r.dropped_sparse.push_back({d.at("column").get<std::string>(), d.at("zero_fraction").get<double>()});
    r.added_temporal = j.at("added_temporal").get<std::vector<std::string>>();
    for (const auto& a : j.at("added_ratio"))
        r.added_ratio.push_back({a.at("numerator").get<std::string>(), a.at("denominator").get<std::string>(),
                                 a.at("column").get<std::string>()});
    r.unpaired_io = j.at("unpaired_io").get<std::vector<std::string>>();
    for (const auto& p : j.at("correlation_pairs"))
        r.correlation_pairs.push_back({p.at("a").get<std::string>(), p.at("b").get<std::string>(), p.at("r").get<double>()});
    for (const auto& p : j.at("pruned"))
        r.pruned.push_back({p.at("removed").get<std::string>(), p.at("kept").get<std::string>(), p.at("r").get<double>()});
    r.final_columns = j.at("final_columns").get<std::vector<std::string>>();
    return r;
}

}  // namespace bhdetect
