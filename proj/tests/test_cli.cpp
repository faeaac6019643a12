#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "bhdetect/cli.hpp"
#include "bhdetect/hash.hpp"
#include "support.hpp"

using namespace bhdetect;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

// Three days of the benchmark scenario plus a small grid, so a full run takes seconds.
fs::path small_experiment(const fs::path& dir) {
    auto sc = nlohmann::json::parse(slurp(bhtest::data_dir() / "benchmark_scenario.json"));
    const std::int64_t t0 = sc["horizon"][0];
    sc["horizon"][1] = t0 + 3 * 86400;
    write_text(dir / "scenario.json", sc.dump(2));

    nlohmann::json cfg = nlohmann::json::parse(slurp(bhtest::data_dir() / "experiment.json"));
    cfg["scenario"] = "scenario.json";
    cfg["detector"]["eps"] = {1.0, 2.0, 3.0, 5.0};
    cfg["detector"]["min_pts"] = {5, 10};
    write_text(dir / "experiment.json", cfg.dump(2));
    return dir / "experiment.json";
}

Result stage(const std::string& cmd, const fs::path& cfg, const fs::path& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{cmd, "--config", cfg.string(), "--out", out.string()};
    args.insert(args.end(), extra.begin(), extra.end());
    return cli(args);
}

}  // namespace

TEST_CASE("full pipeline writes every artifact and a consistent manifest") {
    const auto dir = bhtest::scratch_dir("cli-full");
    const auto cfg = small_experiment(dir);
    const auto out = dir / "run";
    for (const char* cmd : {"simulate", "bhmm", "tune", "detect", "evaluate", "report"}) {
        const auto r = stage(cmd, cfg, out);
        INFO(cmd << ": " << r.err);
        REQUIRE(r.code == 0);
    }
    for (const char* f : {"telemetry.csv", "labels.csv", "delivery.csv", "events.csv", "bhmm_matrix.csv",
                          "bhmm_report.json", "tuning_report.json", "detections.csv", "detect_report.json",
                          "eval_report.json", "pdr_report.json", "report.csv", "manifest.json"})
        CHECK(fs::exists(out / f));

    const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
    CHECK(manifest["seed"] == 7);
    for (const auto& [name, entry] : manifest["artifacts"].items()) {
        if (entry.value("volatile", false)) continue;
        CHECK(entry["sha256"] == sha256_file(out / name));
        CHECK(entry["bytes"] == fs::file_size(out / name));
    }
    for (const char* s : {"simulate", "bhmm", "tune", "detect", "evaluate", "report"})
        CHECK(manifest["stages"].contains(s));
    CHECK(manifest["stages"]["bhmm"]["config_sha256"] == sha256_file(cfg));

    CHECK(slurp(out / "report.csv").rfind("metric,variant,node,value\n", 0) == 0);
    const auto eval = nlohmann::json::parse(slurp(out / "eval_report.json"));
    CHECK(eval["metrics"]["confusion"].contains("tp"));
    CHECK(eval["metrics"]["per_node"].size() == 3);
}

TEST_CASE("repeated runs are byte-identical") {
    const auto dir = bhtest::scratch_dir("cli-repeat");
    const auto cfg = small_experiment(dir);
    for (const char* run : {"a", "b"})
        for (const char* cmd : {"simulate", "bhmm", "tune", "detect", "evaluate"}) REQUIRE(stage(cmd, cfg, dir / run).code == 0);
    for (const char* f : {"telemetry.csv", "bhmm_matrix.csv", "tuning_report.json", "detections.csv", "eval_report.json",
                          "pdr_report.json", "manifest.json"})
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
}

TEST_CASE("seed flag overrides the configuration") {
    const auto dir = bhtest::scratch_dir("cli-seed");
    const auto cfg = small_experiment(dir);
    REQUIRE(stage("simulate", cfg, dir / "s7").code == 0);
    REQUIRE(stage("simulate", cfg, dir / "s8", {"--seed", "8"}).code == 0);
    CHECK(slurp(dir / "s7" / "events.csv") != slurp(dir / "s8" / "events.csv"));
    CHECK(nlohmann::json::parse(slurp(dir / "s8" / "manifest.json"))["seed"] == 8);
}

TEST_CASE("explicit detector parameters skip the tuning report") {
    const auto dir = bhtest::scratch_dir("cli-explicit");
    const auto cfg = small_experiment(dir);
    REQUIRE(stage("simulate", cfg, dir / "r").code == 0);
    REQUIRE(stage("bhmm", cfg, dir / "r").code == 0);
    const auto r = stage("detect", cfg, dir / "r", {"--eps", "3", "--min-pts", "10"});
    CHECK(r.code == 0);
    CHECK_FALSE(fs::exists(dir / "r" / "tuning_report.json"));
    const auto half = stage("detect", cfg, dir / "r", {"--eps", "3"});
    CHECK(half.code == 2);
    const auto whole = stage("detect", cfg, dir / "r", {"--mode", "whole_matrix", "--eps", "3", "--min-pts", "10"});
    CHECK(whole.code == 0);
}

TEST_CASE("evaluation without ground truth fails clearly") {
    const auto dir = bhtest::scratch_dir("cli-nolabels");
    const auto cfg = small_experiment(dir);
    const auto out = dir / "r";
    for (const char* cmd : {"simulate", "bhmm"}) REQUIRE(stage(cmd, cfg, out).code == 0);
    REQUIRE(stage("detect", cfg, out, {"--eps", "3", "--min-pts", "10"}).code == 0);
    fs::remove(out / "labels.csv");
    const auto r = stage("evaluate", cfg, out);
    CHECK(r.code == 1);
    CHECK(r.err.find("ground truth required") != std::string::npos);
}

TEST_CASE("stages report missing inputs") {
    const auto dir = bhtest::scratch_dir("cli-missing");
    const auto cfg = small_experiment(dir);
    const auto r = stage("tune", cfg, dir / "empty");
    CHECK(r.code == 1);
    CHECK(r.err.find("missing artifact") != std::string::npos);
}

TEST_CASE("configuration and usage errors exit with 2") {
    const auto dir = bhtest::scratch_dir("cli-usage");
    const auto cfg = small_experiment(dir);
    CHECK(cli({}).code == 2);
    CHECK(cli({"frobnicate"}).code == 2);
    CHECK(stage("simulate", dir / "nope.json", dir / "r").code == 2);

    auto j = nlohmann::json::parse(slurp(cfg));
    j["surprise"] = 1;
    write_text(dir / "bad.json", j.dump());
    const auto unknown = stage("simulate", dir / "bad.json", dir / "r");
    CHECK(unknown.code == 2);
    CHECK(unknown.err.find("surprise") != std::string::npos);

    j.erase("surprise");
    j["scenario"] = "missing_scenario.json";
    write_text(dir / "bad2.json", j.dump());
    CHECK(stage("simulate", dir / "bad2.json", dir / "r").code == 2);

    REQUIRE(stage("simulate", cfg, dir / "r").code == 0);
    CHECK(stage("bhmm", cfg, dir / "r", {"--corr-threshold", "1.5"}).code == 2);
    CHECK(stage("detect", cfg, dir / "r", {"--mode", "sideways"}).code == 2);
}

TEST_CASE("ingest normalizes and logs gaps") {
    const auto dir = bhtest::scratch_dir("cli-ingest");
    write_text(dir / "raw.csv", "timestamp,M2.Node-1/eth0.input_packet_rate\n600,3\n0,1\n900,4\n");
    const auto r = cli({"ingest", "--input", (dir / "raw.csv").string(), "--out", (dir / "r").string()});
    REQUIRE(r.code == 0);
    const auto csv = slurp(dir / "r" / "ingested.csv");
    CHECK(csv.find("300,1\n") != std::string::npos);
    const auto log = nlohmann::json::parse(slurp(dir / "r" / "ingest_log.json"));
    CHECK(log.dump().find("300") != std::string::npos);

    write_text(dir / "broken.csv", "timestamp,a\n0,x\n");
    CHECK(cli({"ingest", "--input", (dir / "broken.csv").string(), "--out", (dir / "r").string()}).code == 1);
}

TEST_CASE("the installed binary runs and reports usage errors") {
    const std::string bin = BHDETECT_CLI_PATH;
    CHECK(std::system((bin + " --help > /dev/null").c_str()) == 0);
    const int status = std::system((bin + " simulate --bogus > /dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(status) == 2);
}
