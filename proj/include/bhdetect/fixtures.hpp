#pragma once

// Seeded synthetic datasets and the bundled reference scenarios.

#include <cstdint>

#include "bhdetect/netsim.hpp"
#include "bhdetect/telemetry_schema.hpp"

namespace bhdetect {

inline constexpr std::int64_t kBenchmarkStart = 1625097600;  // 2021-07-01 00:00 UTC
inline constexpr std::size_t kBenchmarkRows = 17280;          // 60 days of 5-minute samples

/// 220 sensor columns with an ISP-like redundancy structure: per interface,
/// data rate, packet rate and load move together and M1 tracks M2; route
/// tables carry near-duplicate counters; a few interfaces and the deleted-
/// route counters are almost always zero. Built so the default BHMM
/// parameters reduce it to 88 columns.
TelemetryDataset make_redundancy_fixture(std::uint64_t seed, std::size_t rows = kBenchmarkRows,
                                         std::int64_t t_begin = kBenchmarkStart, std::int64_t period_s = 300);

/// 60 days on the reference topology. Every 15 minutes each of Node-1,
/// Node-7 and Node-8 starts a 15-minute black hole with probability 0.1.
Scenario benchmark_scenario(std::uint64_t seed = 7);

/// One-minute sampling with three explicit events: 15 minutes on Node-1,
/// 15 minutes on Node-8 and 5 minutes on Node-7.
Scenario pdr_scenario(std::uint64_t seed = 11);

}  // namespace bhdetect
