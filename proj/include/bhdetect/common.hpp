#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bhdetect {

/// Dense row-major matrix; rows are sampling instants, columns are features.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Runtime failure (bad data, failed precondition on inputs).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or parameter (maps to a usage error at the CLI).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A silent-drop interval at one router. The interval is half-open:
/// [start_s, start_s + duration_s).
struct BlackHoleEvent {
    enum class Kind { drop_transit };

    std::string node;
    std::int64_t start_s = 0;
    std::int64_t duration_s = 0;
    Kind kind = Kind::drop_transit;

    std::int64_t end_s() const { return start_s + duration_s; }
    bool covers(std::int64_t t) const { return t >= start_s && t < end_s(); }

    friend bool operator==(const BlackHoleEvent&, const BlackHoleEvent&) = default;
};

/// Boolean grid over (timestamp, node). Used both for ground-truth labels
/// and for detector output.
struct FlagTable {
    std::vector<std::int64_t> timestamps;
    std::vector<std::string> nodes;
    std::vector<std::uint8_t> values;  // row-major: timestamps x nodes

    FlagTable() = default;
    FlagTable(std::vector<std::int64_t> ts, std::vector<std::string> ns)
        : timestamps(std::move(ts)), nodes(std::move(ns)),
          values(timestamps.size() * nodes.size(), 0) {}

    bool at(std::size_t t, std::size_t n) const { return values[t * nodes.size() + n] != 0; }
    void set(std::size_t t, std::size_t n, bool v) { values[t * nodes.size() + n] = v ? 1 : 0; }

    /// Index of a node, or nodes.size() when absent.
    std::size_t node_index(const std::string& node) const;
    std::size_t count_true(std::size_t node) const;

    friend bool operator==(const FlagTable&, const FlagTable&) = default;
};

/// Canonical shortest round-trip decimal text for a double.
std::string format_double(double v);

}  // namespace bhdetect
