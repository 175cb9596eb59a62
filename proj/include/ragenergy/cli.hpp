#pragma once

// Command-line front end: `run`, `estimate`, `replay` and `report`.
// Exit codes: 0 success, 1 validation/configuration error, 2 runtime error.

#include <atomic>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ragenergy/analysis.hpp"
#include "ragenergy/experiment.hpp"

namespace ragenergy::cli {

enum class LogLevel { error, warn, info, debug };

struct GlobalOptions {
  std::string config;
  std::string log_level = "info";
  std::string output_dir;
  bool force = false;
  std::string driver;
  std::optional<std::uint64_t> seed;
  std::string stdout_format = "text";

  [[nodiscard]] LogLevel level() const {
    if (log_level == "error") return LogLevel::error;
    if (log_level == "warn") return LogLevel::warn;
    if (log_level == "debug") return LogLevel::debug;
    return LogLevel::info;
  }
  [[nodiscard]] bool json_stdout() const { return stdout_format == "json"; }
};

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

namespace detail {

inline std::string sig4(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

inline StageKind parse_stage_alias(const std::string& s) {
  if (s == "llm" || s == "inference") return StageKind::llm_inference;
  if (s == "hc" || s == "hallucination") return StageKind::hallucination_check;
  if (s == "classify") return StageKind::classification;
  return parse_stage_kind(s);
}

/// Discards everything; used for suppressed status output.
struct NullBuffer : std::streambuf {
  int overflow(int c) override { return c; }
};

inline ProfileRegistry registry_for(const GlobalOptions& g) {
  if (g.config.empty()) return ProfileRegistry::builtin();
  return load_experiment_config(g.config).profiles;
}

inline TokenizerSpec tokenizer_for(const GlobalOptions& g) {
  if (g.config.empty()) return {};
  return load_experiment_config(g.config).tokenizer;
}

}  // namespace detail

/// estimate DURATION PROFILE STAGE
inline int cmd_estimate(const GlobalOptions& g, double duration_s, const std::string& profile, const std::string& stage,
                        Streams io) {
  const auto kind = detail::parse_stage_alias(stage);
  const auto registry = detail::registry_for(g);
  const bool cpu = normalize_model_id(profile) == "cpu";
  if (!cpu && kind == StageKind::retrieval) {
    throw Error(Errc::configuration, "retrieval runs on the CPU; use the 'cpu' profile");
  }
  const double kwh = stage_energy_kwh(cpu ? Executor::cpu : Executor::llm, profile, duration_s, registry);
  if (g.json_stdout()) {
    nlohmann::ordered_json j;
    j["duration_s"] = duration_s;
    j["profile"] = cpu ? std::string("cpu") : registry.llm(profile).model_id();
    j["stage"] = std::string(to_string(kind));
    j["energy_kwh"] = kwh;
    io.out << j.dump() << '\n';
  } else {
    io.out << detail::sig4(kwh) << " kWh\n";
  }
  return 0;
}

inline int cmd_run(const GlobalOptions& g, const std::atomic<bool>* stop, Streams io) {
  if (g.config.empty()) throw Error(Errc::configuration, "run needs --config");
  auto config = load_experiment_config(g.config);
  if (!g.driver.empty()) config.driver = parse_driver_mode(g.driver);
  if (g.seed) config.seed = g.seed;
  if (g.force) config.force = true;
  if (!g.output_dir.empty()) {
    config.log_path = (std::filesystem::path(g.output_dir) / std::filesystem::path(config.log_path).filename()).string();
  }
  detail::NullBuffer null_buffer;
  std::ostream null_stream(&null_buffer);
  RunHooks hooks;
  hooks.status = g.level() >= LogLevel::info ? &io.err : &null_stream;
  if (stop) hooks.should_stop = [stop] { return stop->load(); };
  const auto s = run_experiment(config, hooks);
  if (g.json_stdout()) {
    nlohmann::ordered_json j;
    j["log"] = config.log_path;
    j["written"] = s.written;
    j["ok"] = s.ok;
    j["degraded"] = s.degraded;
    j["error"] = s.error;
    j["interrupted"] = s.interrupted;
    io.out << j.dump() << '\n';
  } else {
    io.out << "wrote " << s.written << " records to " << config.log_path << " (ok " << s.ok << ", degraded "
           << s.degraded << ", error " << s.error << ")" << (s.interrupted ? " [interrupted]" : "") << '\n';
  }
  return s.interrupted ? 2 : 0;
}

/// Re-derives every record of a log and checks it against the original.
inline int cmd_replay(const GlobalOptions& g, const std::string& log_path, Streams io) {
  const auto profiles = detail::registry_for(g);
  const Tokenizer tokenizer(detail::tokenizer_for(g));
  const auto records = read_run_log(log_path);
  const auto replayed = replay_log(records, profiles, tokenizer);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (auto why = verify_record_energy(records[i], profiles)) {
      ++mismatches;
      if (g.level() >= LogLevel::warn) io.err << "record " << i + 1 << ": " << *why << '\n';
    } else if (!(replayed[i] == records[i])) {
      ++mismatches;
      if (g.level() >= LogLevel::warn) io.err << "record " << i + 1 << ": replay differs from the logged record\n";
    }
  }
  std::string written;
  if (!g.output_dir.empty()) {
    written = (std::filesystem::path(g.output_dir) / "replayed.jsonl").string();
    RunLogWriter out(written, true);
    for (const auto& r : replayed) out.write(r);
  }
  if (g.json_stdout()) {
    nlohmann::ordered_json j;
    j["records"] = records.size();
    j["mismatches"] = mismatches;
    if (!written.empty()) j["output"] = written;
    io.out << j.dump() << '\n';
  } else {
    io.out << "replayed " << records.size() << " records, " << mismatches << " mismatches\n";
  }
  return mismatches == 0 ? 0 : 1;
}

inline int cmd_report(const GlobalOptions& g, const std::string& log_path, const std::string& annotations,
                      const std::vector<std::string>& formats, Streams io) {
  const auto records = read_run_log(log_path);
  std::optional<std::vector<AnnotationRecord>> ann;
  if (!annotations.empty()) ann = load_annotations(annotations);
  const auto report = build_report(records, ann);
  const std::string dir = g.output_dir.empty() ? std::string("report") : g.output_dir;
  const auto paths = emit(report, std::set<std::string>(formats.begin(), formats.end()), dir);
  if (g.json_stdout()) {
    io.out << to_json(report).dump() << '\n';
  } else {
    for (const auto& p : report.pipelines) {
      io.out << p.pipeline << ": n=" << p.n << " excluded=" << p.excluded;
      if (p.median_kwh) io.out << " median=" << detail::sig4(*p.median_kwh) << " kWh";
      io.out << '\n';
    }
    for (const auto& p : paths) io.out << "wrote " << p << '\n';
  }
  return 0;
}

/// Parses argv and dispatches. `stop` is polled between queries by `run`.
inline int main(int argc, const char* const* argv, Streams io, const std::atomic<bool>* stop = nullptr) {
  CLI::App app{"Per-query energy estimates for LLM and RAG pipelines", "ragenergy"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "experiment config (JSON)");
  app.add_option("--log-level", g.log_level, "error, warn, info or debug")
      ->check(CLI::IsMember({"error", "warn", "info", "debug"}));
  app.add_option("--output-dir", g.output_dir, "directory for logs and reports");
  app.add_flag("--force", g.force, "run outside the configured time windows; records are marked forced");
  app.add_option("--driver", g.driver, "live, replay or synthetic")->check(CLI::IsMember({"live", "replay", "synthetic"}));
  auto* seed_opt = app.add_option("--seed", seed, "seed for the synthetic driver");
  app.add_option("--stdout", g.stdout_format, "stdout format: text or json")->check(CLI::IsMember({"text", "json"}));

  auto* run = app.add_subcommand("run", "execute the configured experiment and append to the run log");

  auto* estimate = app.add_subcommand("estimate", "energy of one stage from its duration");
  double duration = 0;
  std::string profile, stage;
  estimate->add_option("duration", duration, "stage duration in seconds")->required();
  estimate->add_option("profile", profile, "hardware profile (gpt-4o, gpt-4o-mini, cpu, ...)")->required();
  estimate->add_option("stage", stage, "stage kind (llm, retrieval, hc, classification)")->required();

  auto* replay = app.add_subcommand("replay", "re-derive a run log and check it");
  std::string replay_path;
  replay->add_option("log", replay_path, "run log (JSONL)")->required();

  auto* report = app.add_subcommand("report", "aggregate a run log");
  std::string report_path, annotations;
  std::vector<std::string> formats = {"json", "csv", "svg"};
  report->add_option("log", report_path, "run log (JSONL)")->required();
  report->add_option("--annotations", annotations, "statement annotations (CSV or JSON)");
  report->add_option("--format", formats, "json, csv, svg (comma-separated)")->delimiter(',')->allow_extra_args(false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      io.out << app.help();
      return 0;
    }
    io.err << "usage error: " << e.what() << '\n';
    return 1;
  }
  if (seed_opt->count() > 0) g.seed = seed;

  try {
    if (*run) return cmd_run(g, stop, io);
    if (*estimate) return cmd_estimate(g, duration, profile, stage, io);
    if (*replay) return cmd_replay(g, replay_path, io);
    if (*report) return cmd_report(g, report_path, annotations, formats, io);
  } catch (const Error& e) {
    io.err << e.what() << '\n';
    return is_validation_error(e.code()) ? 1 : 2;
  } catch (const std::exception& e) {
    io.err << "runtime error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace ragenergy::cli
