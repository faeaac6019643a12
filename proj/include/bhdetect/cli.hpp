#pragma once

// Command-line pipeline. Stages hand off through files in one output
// directory and record every artifact, with its SHA-256, in manifest.json.
//
//   simulate  scenario -> telemetry.csv labels.csv delivery.csv events.csv
//   ingest    raw CSV -> ingested.csv ingest_log.json
//   bhmm      telemetry.csv -> bhmm_matrix.csv bhmm_report.json
//   tune      bhmm_matrix.csv -> tuning_report.json
//   detect    bhmm_matrix.csv + tuning_report.json -> detections.csv detect_report.json
//   evaluate  detections.csv + labels.csv -> eval_report.json [pdr_report.json]
//             --paired adds paired_report.json and timing.json
//   report    *_report.json -> report.csv
//
// Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "bhdetect/bhmm.hpp"
#include "bhdetect/detector.hpp"
#include "bhdetect/evaluation.hpp"
#include "bhdetect/netsim.hpp"

namespace bhdetect {

enum class BhmmScope { global, per_node };

struct ExperimentConfig {
    std::filesystem::path scenario;  // resolved against the config file's directory
    std::filesystem::path out;       // resolved against the working directory
    std::optional<std::uint64_t> seed;
    std::vector<std::string> nodes;  // empty: every node with columns
    BhmmParams bhmm;
    BhmmScope bhmm_scope = BhmmScope::per_node;
    DetectMode mode = DetectMode::per_node;
    TuningGrid grid;
    SplitSpec split;
    MitigationMode mitigation = MitigationMode::detector_feed;

    ExperimentConfig();
    void validate() const;  // throws ConfigError
    static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    nlohmann::json to_json() const;
};

ExperimentConfig load_experiment(const std::filesystem::path& path);

/// The grid used when a configuration does not name one.
TuningGrid default_tuning_grid();

/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace bhdetect
