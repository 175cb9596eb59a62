#include <gtest/gtest.h>

#include <cstdio>
#include <sys/wait.h>

#include "ragenergy/analysis.hpp"
#include "test_support.hpp"

using testing_support::read_file;
using testing_support::sample;
using testing_support::TempDir;
using testing_support::write_file;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the installed binary through the shell; stderr goes to a side file.
Result cli(const std::string& args) {
  static TempDir scratch;
  const auto err_path = scratch.file("stderr.txt");
  const std::string cmd = std::string("'") + RAGENERGY_CLI + "' " + args + " 2>'" + err_path + "'";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, pipe)) > 0;) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = read_file(err_path);
  return r;
}

std::string q(const std::string& s) { return "'" + s + "'"; }

// Small synthetic experiment over the bundled questions.
std::string small_config(const TempDir& dir, const std::string& extra = "") {
  const auto path = dir.file("exp.json");
  write_file(path, R"({"pipelines": ["cnz", "direct"], "dataset": ")" + sample("questions.csv") +
                       R"(", "seed": 7, "log_path": "runs.jsonl")" + extra + "}");
  return path;
}

}  // namespace

TEST(Cli, EstimateText) {
  auto r = cli("estimate 3600 gpt-4o-mini llm");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "0.3843 kWh\n");
  r = cli("estimate 3600 gpt-4o inference");
  EXPECT_EQ(r.out, "0.7924 kWh\n");
  r = cli("estimate 3600 cpu retrieval");
  EXPECT_EQ(r.out, "0.009265 kWh\n");
}

TEST(Cli, EstimateJsonAfterSubcommand) {
  const auto r = cli("estimate 10.59 gpt-4o-mini hc --stdout json");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["stage"], "hallucination_check");
  EXPECT_NEAR(j["energy_kwh"].get<double>(), 10.59 / 3600 * 0.3843, 1e-12);
}

TEST(Cli, EstimateErrorsExitOne) {
  auto r = cli("estimate -5 gpt-4o llm");
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
  r = cli("estimate 5 claude-9 llm");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("gpt-4o"), std::string::npos) << r.err;  // lists known profiles
  r = cli("estimate 5 gpt-4o retrieval");
  EXPECT_EQ(r.code, 1);
  r = cli("estimate 5 gpt-4o dance");
  EXPECT_EQ(r.code, 1);
  r = cli("");
  EXPECT_EQ(r.code, 1);
  r = cli("estimate 1 gpt-4o llm --config " + q("/nonexistent/x.json"));
  EXPECT_NE(r.code, 0);
}

TEST(Cli, HelpExitsZero) {
  const auto r = cli("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("estimate"), std::string::npos);
}

TEST(Cli, RunReportReplayRoundTrip) {
  TempDir dir;
  const auto config = small_config(dir);
  auto r = cli("run --config " + q(config) + " --stdout json");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summary = nlohmann::json::parse(r.out);
  EXPECT_EQ(summary["written"], 204);
  const auto log = dir.file("runs.jsonl");

  r = cli("replay " + q(log));
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "replayed 204 records, 0 mismatches\n");

  r = cli("report " + q(log) + " --output-dir " + q(dir.file("rep")) + " --annotations " +
          q(sample("annotations.sample.csv")));
  EXPECT_EQ(r.code, 0) << r.err;
  for (const char* f : {"summary.json", "summary.csv", "median_energy.svg", "stage_shares.svg", "tokens_vs_energy.svg",
                        "factual_index.svg", "embellishment_index.svg", "energy_vs_quality.svg"}) {
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "rep" / f)) << f;
  }
  const auto j = nlohmann::json::parse(read_file(dir.file("rep/summary.json")));
  EXPECT_EQ(j["pipelines"].size(), 2u);
  EXPECT_EQ(j["pipelines"][0]["pipeline"], "cnz");
  EXPECT_EQ(j["pipelines"][0]["n"], 102);
}

TEST(Cli, ReplayNamesTamperedRecord) {
  TempDir dir;
  ASSERT_EQ(cli("run --config " + q(small_config(dir))).code, 0);
  const auto log = dir.file("runs.jsonl");
  auto records = ragenergy::read_run_log(log);
  records[41].energy.total_kwh *= 1.01;
  {
    ragenergy::RunLogWriter w(log, true);
    for (const auto& rec : records) w.write(rec);
  }
  const auto r = cli("replay " + q(log));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.out, "replayed 204 records, 1 mismatches\n");
  EXPECT_NE(r.err.find("record 42"), std::string::npos) << r.err;
}

TEST(Cli, SyntheticRunsAreReproducible) {
  TempDir a, b;
  ASSERT_EQ(cli("run --config " + q(small_config(a))).code, 0);
  ASSERT_EQ(cli("run --config " + q(small_config(b))).code, 0);
  EXPECT_EQ(read_file(a.file("runs.jsonl")), read_file(b.file("runs.jsonl")));
  ASSERT_EQ(cli("report --format json,csv " + q(a.file("runs.jsonl")) + " --output-dir " + q(a.file("r"))).code, 0);
  ASSERT_EQ(cli("report --format json,csv " + q(b.file("runs.jsonl")) + " --output-dir " + q(b.file("r"))).code, 0);
  EXPECT_EQ(read_file(a.file("r/summary.json")), read_file(b.file("r/summary.json")));
  EXPECT_EQ(read_file(a.file("r/summary.csv")), read_file(b.file("r/summary.csv")));
  EXPECT_FALSE(std::filesystem::exists(a.path() / "r" / "median_energy.svg"));

  // A different seed gives a different log.
  TempDir c;
  ASSERT_EQ(cli("run --seed 8 --config " + q(small_config(c))).code, 0);
  EXPECT_NE(read_file(a.file("runs.jsonl")), read_file(c.file("runs.jsonl")));
}

TEST(Cli, RunOverrides) {
  TempDir dir;
  const auto config = small_config(dir, R"(, "windows": ["morning"])");
  const auto r = cli("run --force --output-dir " + q(dir.file("elsewhere")) + " --config " + q(config));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto records = ragenergy::read_run_log(dir.file("elsewhere/runs.jsonl"));
  ASSERT_EQ(records.size(), 204u);
  EXPECT_TRUE(records.front().forced);
  EXPECT_FALSE(std::filesystem::exists(dir.path() / "runs.jsonl"));
}

TEST(Cli, RunConfigErrors) {
  TempDir dir;
  write_file(dir.file("bad.json"), R"({"dataset": "q.csv"})");
  auto r = cli("run --config " + q(dir.file("bad.json")));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("seed"), std::string::npos) << r.err;
  r = cli("run");
  EXPECT_EQ(r.code, 1);
  r = cli("run --config " + q(small_config(dir)) + " --driver warp");
  EXPECT_EQ(r.code, 1);
  // Dataset that does not exist: runtime I/O failure.
  write_file(dir.file("missing.json"), R"({"dataset": "nope.csv", "seed": 1})");
  r = cli("run --config " + q(dir.file("missing.json")));
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, ReportOnMalformedLogFails) {
  TempDir dir;
  write_file(dir.file("bad.jsonl"), "{oops\n");
  const auto r = cli("report " + q(dir.file("bad.jsonl")) + " --output-dir " + q(dir.file("r")));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("bad.jsonl:1"), std::string::npos) << r.err;
}
