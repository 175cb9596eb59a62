#include <gtest/gtest.h>

#include <sstream>

#include "ragenergy/analysis.hpp"
#include "ragenergy/experiment.hpp"
#include "test_support.hpp"

using namespace ragenergy;
using testing_support::read_file;
using testing_support::TempDir;
using testing_support::write_file;

namespace {

UtcTime at(const char* s) { return parse_utc(s); }

const char* kTwoQuestions = "id,text,bloom_class,tags\nq1,What is net zero?,Knowledge,\nq2,Explain offsets.,Comprehension,\n";

ExperimentConfig two_by_two(const TempDir& dir) {
  write_file(dir.file("q.csv"), kTwoQuestions);
  ExperimentConfig c;
  c.dataset = dir.file("q.csv");
  c.pipelines = {"cnz", "direct"};
  c.seed = 5;
  c.log_path = dir.file("runs.jsonl");
  return c;
}

std::vector<std::string> lines_of(const std::string& path) {
  std::vector<std::string> out;
  std::istringstream in(read_file(path));
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST(RunWindow, HalfOpenLocalInterval) {
  const auto morning = named_window("morning");
  EXPECT_TRUE(within_window(at("2025-03-03T08:30:00Z"), morning));
  EXPECT_TRUE(within_window(at("2025-03-03T08:00:00Z"), morning));
  EXPECT_FALSE(within_window(at("2025-03-03T10:30:00Z"), morning));
  EXPECT_FALSE(within_window(at("2025-03-03T07:59:59.999Z"), morning));
  EXPECT_TRUE(within_window(at("2025-03-03T03:00:00Z"), named_window("random")));
}

TEST(RunWindow, UtcOffsetShiftsLocalTime) {
  const auto morning = named_window("morning", 60);
  EXPECT_TRUE(within_window(at("2025-03-03T07:30:00Z"), morning));
  EXPECT_FALSE(within_window(at("2025-03-03T09:30:00Z"), morning));  // 10:30 local
  const auto evening = named_window("evening", -5 * 60);
  EXPECT_TRUE(within_window(at("2025-03-04T01:15:00Z"), evening));  // 20:15 the previous local day
}

TEST(RunWindow, NextStart) {
  const auto afternoon = named_window("afternoon");
  EXPECT_EQ(format_utc(next_window_start(at("2025-03-03T09:00:00Z"), afternoon)), "2025-03-03T14:00:00.000Z");
  EXPECT_EQ(format_utc(next_window_start(at("2025-03-03T17:00:00Z"), afternoon)), "2025-03-04T14:00:00.000Z");
  EXPECT_EQ(format_utc(next_window_start(at("2025-03-03T15:00:00Z"), afternoon)), "2025-03-03T15:00:00.000Z");
  const auto morning = named_window("morning", 60);
  EXPECT_EQ(format_utc(next_window_start(at("2025-03-03T12:00:00Z"), morning)), "2025-03-04T07:00:00.000Z");
}

TEST(RunWindow, ParsingAndValidation) {
  EXPECT_EQ(detail::parse_utc_offset("+01:00"), 60);
  EXPECT_EQ(detail::parse_utc_offset("-05:30"), -330);
  EXPECT_EQ(detail::parse_utc_offset("Z"), 0);
  EXPECT_THROW((void)detail::parse_utc_offset("Europe/Amsterdam"), Error);
  EXPECT_EQ(detail::parse_clock_time("22:30"), 22 * 60 + 30);
  EXPECT_THROW((void)detail::parse_clock_time("25:00"), Error);
  EXPECT_THROW((void)named_window("night"), Error);
  RunWindow bad{"custom", 600, 500, 0};
  EXPECT_THROW(bad.validate(), Error);
}

TEST(ExperimentConfig, ParsesAndResolvesPaths) {
  TempDir dir;
  write_file(dir.file("exp.json"), R"({
    "schema": 1,
    "pipelines": ["ndc", "mine"],
    "custom_pipelines": [{"name": "mine", "stages": [{"kind": "llm_inference", "executor": "llm", "model_id": "local-8b"}], "max_words": 50}],
    "dataset": "data/q.csv",
    "windows": ["morning", {"label": "lunch", "start": "12:00", "end": "13:00", "utc_offset": "+02:00"}],
    "utc_offset": "+01:00",
    "repetitions": 3,
    "origin": "NL",
    "driver": "synthetic",
    "seed": 9,
    "synthetic": {"start_utc": "2025-01-01T00:00:00Z",
                  "models": {"mine/llm_inference": {"duration_s": {"dist": "uniform", "low": 1, "high": 2}, "output_tokens": 50}}},
    "profiles": {"local-8b": {"gpus_per_model": 1, "gpus_per_node": 8, "batch_size": 4, "gpu_draw_fraction": 0.5,
                              "non_gpu_draw_fraction": 0.5, "node_gpu_kw": 5.6, "node_non_gpu_kw": 4.6, "pue": 1.2},
                 "cpu": {"core_power_kw": 0.01, "pue": 1.5}},
    "tokenizer": {"mode": "approximate", "chars_per_token": 3.5},
    "grounding": {"threshold": 0.7},
    "retrieval": {"top_k": 3},
    "log_path": "out/runs.jsonl"
  })");
  const auto c = load_experiment_config(dir.file("exp.json"));
  EXPECT_EQ(c.pipelines, (std::vector<std::string>{"ndc", "mine"}));
  EXPECT_EQ(find_pipeline("mine", c.available_pipelines).max_words, 50);
  EXPECT_EQ(c.dataset, (dir.path() / "data/q.csv").string());
  EXPECT_EQ(c.log_path, (dir.path() / "out/runs.jsonl").string());
  ASSERT_EQ(c.windows.size(), 2u);
  EXPECT_EQ(c.windows[0].utc_offset_minutes, 60);
  EXPECT_EQ(c.windows[1].utc_offset_minutes, 120);
  EXPECT_EQ(c.windows[1].start_minute, 720);
  EXPECT_EQ(c.repetitions, 3);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_TRUE(c.profiles.contains("local-8b"));
  EXPECT_DOUBLE_EQ(c.profiles.cpu().pue, 1.5);
  EXPECT_DOUBLE_EQ(c.tokenizer.approx_chars_per_token, 3.5);
  EXPECT_DOUBLE_EQ(c.live.threshold, 0.7);
  EXPECT_EQ(c.live.top_k, 3u);
  EXPECT_EQ(c.synthetic_config().models.count("mine/llm_inference"), 1u);
  EXPECT_EQ(c.synthetic_config().models.count("cnz/llm_inference"), 1u);
}

TEST(ExperimentConfig, Errors) {
  TempDir dir;
  auto code_of = [&](const std::string& json) {
    write_file(dir.file("c.json"), json);
    try {
      load_experiment_config(dir.file("c.json")).validate();
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::io;  // sentinel: no error
  };
  EXPECT_EQ(code_of("{not json"), Errc::configuration);
  EXPECT_EQ(code_of(R"({"schema": 2})"), Errc::migration);
  EXPECT_EQ(code_of(R"({"dataset": "q.csv", "driver": "synthetic"})"), Errc::configuration);  // no seed
  EXPECT_EQ(code_of(R"({"dataset": "q.csv", "seed": 1, "pipelines": ["bogus"]})"), Errc::configuration);
  EXPECT_EQ(code_of(R"({"dataset": "q.csv", "seed": 1, "driver": "psychic"})"), Errc::configuration);
  EXPECT_EQ(code_of(R"({"dataset": "q.csv", "seed": 1, "repetitions": 0})"), Errc::configuration);
  EXPECT_EQ(code_of(R"({"dataset": "q.csv", "seed": 1})"), Errc::io);
}

TEST(RunExperiment, AppendsOneRecordPerQueryPerPipeline) {
  TempDir dir;
  auto c = two_by_two(dir);
  std::ostringstream status;
  RunHooks hooks;
  hooks.status = &status;
  const auto s = run_experiment(c, hooks);
  EXPECT_EQ(s.written, 4u);
  EXPECT_EQ(s.ok, 4u);
  const auto records = read_run_log(c.log_path);
  ASSERT_EQ(records.size(), 4u);
  // Dataset order within each pipeline, pipelines in config order.
  EXPECT_EQ(records[0].pipeline, "cnz");
  EXPECT_EQ(records[0].question_id, "q1");
  EXPECT_EQ(records[1].question_id, "q2");
  EXPECT_EQ(records[2].pipeline, "direct");
  // Appending, never truncating.
  (void)run_experiment(c, hooks);
  EXPECT_EQ(read_run_log(c.log_path).size(), 8u);
}

TEST(RunExperiment, WaitsForWindowsAndLabelsRecords) {
  TempDir dir;
  auto c = two_by_two(dir);
  c.windows = {named_window("random"), named_window("morning"), named_window("evening")};
  c.synthetic_start_utc = "2025-03-03T12:00:00.000Z";
  std::ostringstream status;
  RunHooks hooks;
  hooks.status = &status;
  const auto s = run_experiment(c, hooks);
  EXPECT_EQ(s.written, 12u);
  EXPECT_NE(status.str().find("waiting for run window 'morning'"), std::string::npos);
  for (const auto& r : read_run_log(c.log_path)) {
    EXPECT_FALSE(r.forced);
    const RunWindow w = named_window(r.run_window);
    EXPECT_TRUE(within_window(parse_utc(r.timestamp), w)) << r.run_window << " " << r.timestamp;
  }
}

TEST(RunExperiment, ForceRunsImmediatelyAndMarksRecords) {
  TempDir dir;
  auto c = two_by_two(dir);
  c.windows = {named_window("morning")};
  c.synthetic_start_utc = "2025-03-03T12:00:00.000Z";
  c.force = true;
  std::ostringstream status;
  RunHooks hooks;
  hooks.status = &status;
  (void)run_experiment(c, hooks);
  EXPECT_TRUE(status.str().empty());
  for (const auto& r : read_run_log(c.log_path)) {
    EXPECT_TRUE(r.forced);
    EXPECT_EQ(r.run_window, "morning");
    EXPECT_EQ(r.timestamp.substr(0, 13), "2025-03-03T12");
  }
}

TEST(RunExperiment, InterruptLeavesCompleteLines) {
  TempDir dir;
  auto c = two_by_two(dir);
  c.repetitions = 5;
  RunHooks hooks;
  int polls = 0;
  hooks.should_stop = [&] { return ++polls > 3; };
  const auto s = run_experiment(c, hooks);
  EXPECT_TRUE(s.interrupted);
  EXPECT_EQ(s.written, 3u);
  const auto lines = lines_of(c.log_path);
  ASSERT_EQ(lines.size(), 3u);
  for (const auto& l : lines) EXPECT_NO_THROW((void)parse_log_line(l));
}

TEST(RunExperiment, UnwritableLogIsStartupError) {
  TempDir dir;
  auto c = two_by_two(dir);
  write_file(dir.file("blocker"), "x");
  c.log_path = dir.file("blocker") + "/runs.jsonl";
  try {
    (void)run_experiment(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::io);
  }
}

TEST(RunExperiment, ReplayModeReproducesAggregates) {
  TempDir dir;
  auto c = two_by_two(dir);
  c.repetitions = 3;
  (void)run_experiment(c);
  ExperimentConfig replay;
  replay.driver = DriverMode::replay;
  replay.replay_log = c.log_path;
  replay.log_path = dir.file("replayed.jsonl");
  const auto s = run_experiment(replay);
  EXPECT_EQ(s.written, 12u);
  EXPECT_EQ(read_file(replay.log_path), read_file(c.log_path));
  EXPECT_EQ(to_json(build_report(read_run_log(replay.log_path))).dump(),
            to_json(build_report(read_run_log(c.log_path))).dump());
}

TEST(RunLogReader, NamesBadLine) {
  TempDir dir;
  write_file(dir.file("bad.jsonl"), "\n{\"schema\":1}\n");
  try {
    (void)read_run_log(dir.file("bad.jsonl"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:2"), std::string::npos);
  }
  EXPECT_THROW((void)read_run_log(dir.file("missing.jsonl")), Error);
}
