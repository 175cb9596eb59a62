#pragma once

// Experiment configuration, run-window scheduling and the run-log writer.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ragenergy/dataset.hpp"
#include "ragenergy/drivers.hpp"
#include "ragenergy/error.hpp"
#include "ragenergy/measurement.hpp"
#include "ragenergy/pipeline.hpp"
#include "ragenergy/power_model.hpp"

namespace ragenergy {

// ---------------------------------------------------------------------------
// Run windows

struct RunWindow {
  std::string label = "random";
  int start_minute = 0;  // local time of day, inclusive
  int end_minute = 24 * 60;  // exclusive
  int utc_offset_minutes = 0;

  [[nodiscard]] bool is_random() const { return label == "random"; }

  void validate() const {
    if (is_random()) return;
    if (start_minute < 0 || end_minute > 24 * 60 || !(start_minute < end_minute)) {
      throw Error(Errc::configuration, "run window '" + label + "' needs 00:00 <= start < end <= 24:00");
    }
  }
};

inline RunWindow named_window(const std::string& label, int utc_offset_minutes = 0) {
  if (label == "random") return {label, 0, 24 * 60, utc_offset_minutes};
  if (label == "morning") return {label, 8 * 60, 10 * 60 + 30, utc_offset_minutes};
  if (label == "afternoon") return {label, 14 * 60, 16 * 60 + 30, utc_offset_minutes};
  if (label == "evening") return {label, 20 * 60, 22 * 60 + 30, utc_offset_minutes};
  throw Error(Errc::configuration,
              "unknown run window '" + label + "' (named windows: random, morning, afternoon, evening)");
}

inline std::vector<RunWindow> default_windows(int utc_offset_minutes = 0) {
  return {named_window("random", utc_offset_minutes), named_window("morning", utc_offset_minutes),
          named_window("afternoon", utc_offset_minutes), named_window("evening", utc_offset_minutes)};
}

namespace detail {

inline int local_minute_of_day(UtcTime t, int utc_offset_minutes) {
  using namespace std::chrono;
  const auto local = t + minutes(utc_offset_minutes);
  const auto since_midnight = floor<minutes>(local - floor<days>(local));
  return static_cast<int>(since_midnight.count());
}

/// "HH:MM"
inline int parse_clock_time(const std::string& s) {
  int h = -1, m = -1;
  char tail = 0;
  if (std::sscanf(s.c_str(), "%d:%d%c", &h, &m, &tail) != 2 || h < 0 || h > 24 || m < 0 || m > 59 ||
      (h == 24 && m != 0)) {
    throw Error(Errc::configuration, "bad time of day '" + s + "' (expected HH:MM)");
  }
  return h * 60 + m;
}

/// "+HH:MM" / "-HH:MM" / "Z"
inline int parse_utc_offset(const std::string& s) {
  if (s.empty() || s == "Z" || s == "UTC") return 0;
  int h = 0, m = 0;
  if ((s[0] != '+' && s[0] != '-') || std::sscanf(s.c_str() + 1, "%d:%d", &h, &m) != 2 || h > 14 || m > 59) {
    throw Error(Errc::configuration, "bad UTC offset '" + s + "' (expected +HH:MM or -HH:MM)");
  }
  return (s[0] == '-' ? -1 : 1) * (h * 60 + m);
}

}  // namespace detail

/// True iff the local time of `utc_now` lies in [start, end). A "random"
/// window accepts any time.
inline bool within_window(UtcTime utc_now, const RunWindow& window) {
  if (window.is_random()) return true;
  const int minute = detail::local_minute_of_day(utc_now, window.utc_offset_minutes);
  return minute >= window.start_minute && minute < window.end_minute;
}

/// Earliest instant >= utc_now that lies inside the window.
inline UtcTime next_window_start(UtcTime utc_now, const RunWindow& window) {
  using namespace std::chrono;
  if (within_window(utc_now, window)) return utc_now;
  const auto offset = minutes(window.utc_offset_minutes);
  const auto local = utc_now + offset;
  auto candidate = floor<days>(local) + minutes(window.start_minute);
  if (candidate <= local) candidate += days(1);
  return time_point_cast<Nanos>(candidate - offset);
}

// ---------------------------------------------------------------------------
// Config

enum class DriverMode { live, replay, synthetic };

inline DriverMode parse_driver_mode(const std::string& s) {
  if (s == "live") return DriverMode::live;
  if (s == "replay") return DriverMode::replay;
  if (s == "synthetic") return DriverMode::synthetic;
  throw Error(Errc::configuration, "unknown driver '" + s + "' (expected live, replay or synthetic)");
}

struct EmbeddingEndpoint {
  EndpointConfig endpoint;
  std::string model = "text-embedding-3-small";
};

struct ExperimentConfig {
  std::vector<std::string> pipelines = {"cnz", "ndc", "direct", "direct-capped"};
  std::vector<PipelineSpec> available_pipelines = builtin_pipelines();
  std::string dataset;
  std::vector<RunWindow> windows = {named_window("random")};
  int repetitions = 1;
  std::string origin;
  DriverMode driver = DriverMode::synthetic;
  std::optional<std::uint64_t> seed;
  std::map<std::string, SyntheticStageModel> synthetic_models;  // overrides on top of the defaults
  std::string synthetic_start_utc = "2025-01-06T00:00:00.000Z";
  std::string replay_log;
  std::string log_path = "runs.jsonl";
  ProfileRegistry profiles = ProfileRegistry::builtin();
  TokenizerSpec tokenizer;
  std::string corpus;
  std::size_t embedding_dim = 256;
  EndpointConfig chat;
  std::optional<EmbeddingEndpoint> embedding;
  LiveDriverConfig live;
  bool force = false;

  void validate() const {
    if (pipelines.empty()) throw Error(Errc::configuration, "experiment needs at least one pipeline");
    for (const auto& name : pipelines) find_pipeline(name, available_pipelines).validate();
    if (repetitions < 1) throw Error(Errc::configuration, "repetitions must be >= 1");
    if (windows.empty()) throw Error(Errc::configuration, "experiment needs at least one run window");
    for (const auto& w : windows) w.validate();
    if (driver == DriverMode::synthetic && !seed) {
      throw Error(Errc::configuration, "the synthetic driver requires a seed");
    }
    if (driver == DriverMode::replay && replay_log.empty()) {
      throw Error(Errc::configuration, "the replay driver requires replay_log");
    }
    if (driver != DriverMode::replay && dataset.empty()) throw Error(Errc::configuration, "dataset path is required");
    if (log_path.empty()) throw Error(Errc::configuration, "log_path is required");
    tokenizer.validate();
  }

  [[nodiscard]] SyntheticConfig synthetic_config() const {
    auto c = SyntheticConfig::defaults(seed.value_or(0));
    for (const auto& [k, m] : synthetic_models) c.models[k] = m;
    return c;
  }
};

namespace detail {

using json = nlohmann::json;

inline Distribution distribution_from_json(const json& j, const std::string& where) {
  if (j.is_number()) return Distribution::constant(j.get<double>());
  if (!j.is_object()) throw Error(Errc::configuration, where + ": expected a number or a distribution object");
  const auto shape = j.value("dist", std::string("constant"));
  if (shape == "constant") return Distribution::constant(j.at("value").get<double>());
  if (shape == "uniform") return Distribution::uniform(j.at("low").get<double>(), j.at("high").get<double>());
  if (shape == "lognormal") return Distribution::lognormal_median(j.at("median").get<double>(), j.at("sigma").get<double>());
  throw Error(Errc::configuration, where + ": unknown distribution '" + shape + "'");
}

inline SyntheticStageModel stage_model_from_json(const json& j, const std::string& where) {
  SyntheticStageModel m;
  if (j.contains("duration_s")) m.duration_s = distribution_from_json(j["duration_s"], where + ".duration_s");
  if (j.contains("input_tokens")) m.input_tokens = distribution_from_json(j["input_tokens"], where + ".input_tokens");
  if (j.contains("output_tokens")) m.output_tokens = distribution_from_json(j["output_tokens"], where + ".output_tokens");
  if (j.contains("tokens_per_second")) m.tokens_per_second = j["tokens_per_second"].get<double>();
  if (j.contains("latency_s")) m.latency_s = distribution_from_json(j["latency_s"], where + ".latency_s");
  return m;
}

inline EndpointConfig endpoint_from_json(const json& j, EndpointConfig base) {
  if (j.contains("base_url")) base.base_url = j["base_url"].get<std::string>();
  if (j.contains("api_key_env")) base.api_key_env = j["api_key_env"].get<std::string>();
  if (j.contains("deadline_s")) base.deadline = std::chrono::seconds(j["deadline_s"].get<int>());
  if (j.contains("max_retries")) base.retry.max_retries = j["max_retries"].get<int>();
  if (j.contains("initial_backoff_ms")) {
    base.retry.initial_backoff = std::chrono::milliseconds(j["initial_backoff_ms"].get<int>());
  }
  return base;
}

inline PipelineSpec pipeline_from_json(const json& j) {
  PipelineSpec p;
  p.name = j.at("name").get<std::string>();
  p.display_name = j.value("display_name", p.name);
  if (j.contains("max_words") && !j["max_words"].is_null()) p.max_words = j["max_words"].get<int>();
  for (const auto& s : j.at("stages")) {
    StageSpec st;
    st.kind = parse_stage_kind(s.at("kind").get<std::string>());
    st.executor = parse_executor(s.at("executor").get<std::string>());
    if (s.contains("model_id") && s["model_id"].is_string()) st.model_id = s["model_id"].get<std::string>();
    if (s.contains("params")) {
      for (const auto& [k, v] : s["params"].items()) st.params[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
    p.stages.push_back(std::move(st));
  }
  return p;
}

inline std::string resolve_path(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

}  // namespace detail

/// Parses an experiment config file. Relative paths are resolved against
/// the directory holding the config.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  using detail::resolve_path;
  ExperimentConfig c;
  try {
    if (!j.is_object()) throw Error(Errc::configuration, "config must be a JSON object");
    if (j.value("schema", 1) != 1) throw Error(Errc::migration, "config schema " + j["schema"].dump() + " (supports 1)");
    for (const auto& p : j.value("custom_pipelines", nlohmann::json::array())) {
      auto spec = detail::pipeline_from_json(p);
      spec.validate();
      c.available_pipelines.push_back(std::move(spec));
    }
    if (j.contains("pipelines")) c.pipelines = j["pipelines"].get<std::vector<std::string>>();
    c.dataset = resolve_path(base_dir, j.value("dataset", std::string()));
    const int offset = detail::parse_utc_offset(j.value("utc_offset", std::string("Z")));
    if (j.contains("windows")) {
      c.windows.clear();
      for (const auto& w : j["windows"]) {
        if (w.is_string()) {
          c.windows.push_back(named_window(w.get<std::string>(), offset));
        } else {
          RunWindow rw;
          rw.label = w.at("label").get<std::string>();
          rw.start_minute = detail::parse_clock_time(w.at("start").get<std::string>());
          rw.end_minute = detail::parse_clock_time(w.at("end").get<std::string>());
          rw.utc_offset_minutes = w.contains("utc_offset") ? detail::parse_utc_offset(w["utc_offset"].get<std::string>()) : offset;
          c.windows.push_back(rw);
        }
      }
    }
    c.repetitions = j.value("repetitions", 1);
    c.origin = j.value("origin", std::string());
    c.driver = parse_driver_mode(j.value("driver", std::string("synthetic")));
    if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("synthetic")) {
      const auto& s = j["synthetic"];
      c.synthetic_start_utc = s.value("start_utc", c.synthetic_start_utc);
      (void)parse_utc(c.synthetic_start_utc);
      const auto models = s.value("models", nlohmann::json::object());
      for (const auto& [k, v] : models.items()) {
        c.synthetic_models[k] = detail::stage_model_from_json(v, "synthetic.models." + k);
      }
    }
    c.replay_log = resolve_path(base_dir, j.value("replay_log", std::string()));
    c.log_path = resolve_path(base_dir, j.value("log_path", std::string("runs.jsonl")));
    if (j.contains("profiles")) {
      for (const auto& [id, p] : j["profiles"].items()) {
        if (id == "cpu") {
          CpuProfile cpu;
          cpu.core_power_kw = p.value("core_power_kw", cpu.core_power_kw);
          cpu.pue = p.value("pue", cpu.pue);
          cpu.core_count = p.value("core_count", cpu.core_count);
          c.profiles.set_cpu(cpu);
          continue;
        }
        if (p.contains("alias_of")) {
          c.profiles.alias(id, p["alias_of"].get<std::string>());
          continue;
        }
        c.profiles.add(HardwareProfile({id, p.at("gpus_per_model").get<int>(), p.at("gpus_per_node").get<int>(),
                                        p.at("batch_size").get<int>(), p.at("gpu_draw_fraction").get<double>(),
                                        p.at("non_gpu_draw_fraction").get<double>(), p.at("node_gpu_kw").get<double>(),
                                        p.at("node_non_gpu_kw").get<double>(), p.at("pue").get<double>()}));
      }
    }
    if (j.contains("tokenizer")) {
      const auto& t = j["tokenizer"];
      c.tokenizer.id = t.value("id", c.tokenizer.id);
      const auto mode = t.value("mode", std::string("approximate"));
      if (mode == "exact_bpe") c.tokenizer.mode = TokenizerMode::exact_bpe;
      else if (mode != "approximate") throw Error(Errc::configuration, "unknown tokenizer mode '" + mode + "'");
      if (t.contains("vocab") && t["vocab"].is_string()) c.tokenizer.vocab_ref = resolve_path(base_dir, t["vocab"].get<std::string>());
      c.tokenizer.approx_chars_per_token = t.value("chars_per_token", c.tokenizer.approx_chars_per_token);
    }
    c.corpus = resolve_path(base_dir, j.value("corpus", std::string()));
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    if (j.contains("endpoints")) {
      const auto& e = j["endpoints"];
      if (e.contains("chat")) c.chat = detail::endpoint_from_json(e["chat"], c.chat);
      if (e.contains("embedding") && !e["embedding"].is_null()) {
        EmbeddingEndpoint emb;
        emb.endpoint = detail::endpoint_from_json(e["embedding"], emb.endpoint);
        emb.model = e["embedding"].value("model", emb.model);
        c.embedding = emb;
      }
    }
    if (j.contains("grounding")) {
      const auto& g = j["grounding"];
      c.live.threshold = g.value("threshold", c.live.threshold);
      if (g.contains("prompt")) {
        const auto& p = g["prompt"];
        c.live.verification.version = p.value("version", c.live.verification.version);
        c.live.verification.system = p.value("system", c.live.verification.system);
        c.live.verification.user_template = p.value("user_template", c.live.verification.user_template);
      }
    }
    if (j.contains("retrieval")) c.live.top_k = j["retrieval"].value("top_k", c.live.top_k);
    if (j.contains("themes")) c.live.themes = j["themes"].get<std::vector<std::string>>();
    if (j.contains("default_theme")) c.live.default_theme = j["default_theme"].get<std::string>();
    c.force = j.value("force", false);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::configuration, std::string("malformed config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  const auto j = nlohmann::json::parse(csv::read_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(Errc::configuration, "config '" + path + "' is not valid JSON");
  return parse_experiment_config(j, std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Run log

inline std::vector<RunRecord> read_run_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot read run log '" + path + "'");
  std::vector<RunRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(parse_log_line(line));
    } catch (const Error& e) {
      throw Error(e.code(), path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

/// Append-only JSONL writer; every record is flushed as it is written.
class RunLogWriter {
 public:
  explicit RunLogWriter(const std::string& path, bool truncate = false) : path_(path) {
    if (const auto dir = std::filesystem::path(path).parent_path(); !dir.empty()) {
      std::error_code ec;
      std::filesystem::create_directories(dir, ec);
    }
    out_.open(path, truncate ? std::ios::trunc : std::ios::app);
    if (!out_) throw Error(Errc::io, "cannot open run log '" + path + "' for writing");
  }

  void write(const RunRecord& r) {
    out_ << to_log_line(r) << '\n';
    out_.flush();
    if (!out_) throw Error(Errc::io, "write to run log '" + path_ + "' failed");
  }

 private:
  std::string path_;
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Runner

struct ExperimentSummary {
  std::size_t written = 0;
  std::size_t ok = 0;
  std::size_t degraded = 0;
  std::size_t error = 0;
  bool interrupted = false;
};

/// Overrides for the runner's environment, mainly for tests.
struct RunHooks {
  std::function<bool()> should_stop;
  std::ostream* status = nullptr;
  std::shared_ptr<StageDriver> driver;  // replaces the mode's driver
  std::shared_ptr<MonotonicClock> clock;
  std::shared_ptr<WallClock> wall;
  bool truncate_log = false;
};

namespace detail {

inline std::shared_ptr<StageDriver> make_live_driver(const ExperimentConfig& config) {
  std::shared_ptr<EmbeddingProvider> embedder;
  if (config.embedding) {
    embedder = std::make_shared<OpenAiEmbedder>(config.embedding->endpoint, config.embedding->model);
  } else {
    embedder = std::make_shared<HashEmbedder>(config.embedding_dim);
  }
  std::shared_ptr<VectorStore> store;
  if (!config.corpus.empty()) store = std::make_shared<VectorStore>(VectorStore::load_jsonl(config.corpus, embedder));
  auto driver = std::make_shared<LiveDriver>(store, embedder, config.live);
  driver->set_llm("", std::make_shared<OpenAiChatClient>(config.chat));
  return driver;
}

}  // namespace detail

inline ExperimentSummary run_experiment(const ExperimentConfig& config, const RunHooks& hooks = {}) {
  config.validate();
  std::ostream& status = hooks.status ? *hooks.status : std::cerr;
  auto stop = [&] { return hooks.should_stop && hooks.should_stop(); };
  const Tokenizer tokenizer(config.tokenizer);
  RunLogWriter log(config.log_path, hooks.truncate_log);
  ExperimentSummary summary;
  auto account = [&](const RunRecord& r) {
    log.write(r);
    ++summary.written;
    switch (r.status()) {
      case StageStatus::ok: ++summary.ok; break;
      case StageStatus::degraded: ++summary.degraded; break;
      case StageStatus::error: ++summary.error; break;
    }
  };

  if (config.driver == DriverMode::replay) {
    for (const auto& r : read_run_log(config.replay_log)) {
      if (stop()) {
        summary.interrupted = true;
        break;
      }
      account(replay_record(r, config.profiles, tokenizer));
    }
    return summary;
  }

  const auto questions = load_questions(config.dataset);
  std::vector<PipelineSpec> pipelines;
  for (const auto& name : config.pipelines) pipelines.push_back(find_pipeline(name, config.available_pipelines));

  std::shared_ptr<MonotonicClock> clock = hooks.clock;
  std::shared_ptr<WallClock> wall = hooks.wall;
  std::shared_ptr<StageDriver> driver = hooks.driver;
  if (config.driver == DriverMode::synthetic) {
    auto sim = std::make_shared<SimulatedTime>(parse_utc(config.synthetic_start_utc));
    if (!clock) clock = sim;
    if (!wall) wall = sim;
    if (!driver) {
      auto* manual = dynamic_cast<ManualClock*>(clock.get());
      if (!manual) throw Error(Errc::configuration, "the synthetic driver needs a manual clock");
      driver = std::make_shared<SyntheticDriver>(config.synthetic_config(), *manual);
    }
  } else {
    if (!clock) clock = std::make_shared<SteadyClock>();
    if (!wall) wall = std::make_shared<SystemWallClock>();
    if (!driver) driver = detail::make_live_driver(config);
  }
  const DriverSet drivers{*driver, config.profiles, tokenizer, *wall};
  for (const auto& p : pipelines) {
    for (const auto& s : p.stages) {
      if (auto why = driver->unsupported(s)) throw Error(Errc::configuration, "pipeline '" + p.name + "': " + *why);
    }
  }

  for (const auto& window : config.windows) {
    for (int rep = 0; rep < config.repetitions; ++rep) {
      for (const auto& pipeline : pipelines) {
        for (const auto& q : questions) {
          if (stop()) {
            summary.interrupted = true;
            return summary;
          }
          bool forced = false;
          if (!within_window(wall->now_utc(), window)) {
            if (config.force) {
              forced = true;
            } else {
              while (!within_window(wall->now_utc(), window)) {
                const auto next = next_window_start(wall->now_utc(), window);
                status << "waiting for run window '" << window.label << "' (opens " << format_utc(next) << ")\n";
                wall->sleep_until(next);
                if (stop()) {
                  summary.interrupted = true;
                  return summary;
                }
              }
            }
          }
          RunLabels labels{window.label, forced, config.origin, rep, std::nullopt};
          account(execute_pipeline(pipeline, q, drivers, *clock, labels));
        }
      }
    }
  }
  return summary;
}

}  // namespace ragenergy
