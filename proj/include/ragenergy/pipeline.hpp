#pragma once

// Workflow declarations (ordered stage specs), run records, and the
// sequential, per-stage-timed executor.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ragenergy/dataset.hpp"
#include "ragenergy/error.hpp"
#include "ragenergy/grounding.hpp"
#include "ragenergy/llm_client.hpp"
#include "ragenergy/measurement.hpp"
#include "ragenergy/power_model.hpp"

namespace ragenergy {

inline constexpr int kRunLogSchema = 1;

// ---------------------------------------------------------------------------
// Specs

struct StageSpec {
  StageKind kind = StageKind::llm_inference;
  Executor executor = Executor::llm;
  std::optional<std::string> model_id;
  std::map<std::string, std::string> params;

  [[nodiscard]] std::optional<std::string> param(const std::string& key) const {
    auto it = params.find(key);
    return it == params.end() ? std::nullopt : std::optional<std::string>(it->second);
  }

  [[nodiscard]] GroundingMode grounding_mode() const {
    return executor == Executor::cpu ? GroundingMode::cpu_cosine : GroundingMode::llm_check;
  }

  void validate() const {
    const auto where = std::string(to_string(kind)) + " stage: ";
    switch (kind) {
      case StageKind::classification:
      case StageKind::llm_inference:
        if (executor != Executor::llm) throw Error(Errc::configuration, where + "requires the llm executor");
        break;
      case StageKind::retrieval:
        if (executor != Executor::cpu) throw Error(Errc::configuration, where + "requires the cpu executor");
        break;
      case StageKind::hallucination_check:
        break;
    }
    if (executor == Executor::llm && (!model_id || model_id->empty())) {
      throw Error(Errc::configuration, where + "llm executor needs a model_id");
    }
  }

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct PipelineSpec {
  std::string name;
  std::string display_name;
  std::vector<StageSpec> stages;
  std::optional<int> max_words;  // output constraint

  void validate() const {
    if (name.empty()) throw Error(Errc::configuration, "pipeline needs a name");
    if (stages.empty()) throw Error(Errc::configuration, "pipeline '" + name + "' has no stages");
    int retrievals = 0;
    for (const auto& s : stages) {
      s.validate();
      retrievals += s.kind == StageKind::retrieval;
    }
    if (retrievals > 1) throw Error(Errc::configuration, "pipeline '" + name + "' has more than one retrieval stage");
    if (max_words && *max_words < 1) throw Error(Errc::configuration, "pipeline '" + name + "': max_words must be >= 1");
  }
};

inline constexpr const char* kLargeModel = "gpt-4o";
inline constexpr const char* kMiniModel = "gpt-4o-mini";
inline constexpr int kDefaultTopK = 5;
inline constexpr double kTokensPerWord = 1.5;

/// The four compared workflows: the cosine-filtered RAG ("cnz"), the
/// classify-retrieve-generate-verify RAG ("ndc"), and the bare model with and
/// without a 200-word cap.
inline std::vector<PipelineSpec> builtin_pipelines() {
  const auto llm = [](StageKind k, const char* model) { return StageSpec{k, Executor::llm, model, {}}; };
  const StageSpec retrieval{StageKind::retrieval, Executor::cpu, std::nullopt, {{"top_k", std::to_string(kDefaultTopK)}}};
  const StageSpec cosine_check{StageKind::hallucination_check, Executor::cpu, std::nullopt, {{"threshold", "0.5"}}};

  PipelineSpec cnz{"cnz", "CNZ", {retrieval, llm(StageKind::llm_inference, kMiniModel), cosine_check}, std::nullopt};
  PipelineSpec ndc{"ndc",
                   "ChatNDC",
                   {llm(StageKind::classification, kLargeModel), retrieval, llm(StageKind::llm_inference, kMiniModel),
                    llm(StageKind::hallucination_check, kMiniModel)},
                   std::nullopt};
  PipelineSpec direct{"direct", "GPT 4o-Mini", {llm(StageKind::llm_inference, kMiniModel)}, std::nullopt};
  PipelineSpec capped{"direct-capped", "GPT 4o-Mini (200)", {llm(StageKind::llm_inference, kMiniModel)}, 200};
  return {cnz, ndc, direct, capped};
}

inline PipelineSpec find_pipeline(std::string_view name, const std::vector<PipelineSpec>& available = builtin_pipelines()) {
  for (const auto& p : available) {
    if (p.name == name) return p;
  }
  std::string names;
  for (const auto& p : available) names += (names.empty() ? "" : ", ") + p.name;
  throw Error(Errc::configuration, "unknown pipeline '" + std::string(name) + "' (available: " + names + ")");
}

// ---------------------------------------------------------------------------
// Records

enum class StageStatus { ok, degraded, error };

constexpr std::string_view to_string(StageStatus s) noexcept {
  switch (s) {
    case StageStatus::ok: return "ok";
    case StageStatus::degraded: return "degraded";
    case StageStatus::error: return "error";
  }
  return "?";
}

inline StageStatus parse_stage_status(std::string_view s) {
  if (s == "ok") return StageStatus::ok;
  if (s == "degraded") return StageStatus::degraded;
  if (s == "error") return StageStatus::error;
  throw Error(Errc::schema, "unknown stage status '" + std::string(s) + "'");
}

struct StageTrace {
  StageKind kind = StageKind::llm_inference;
  Executor executor = Executor::llm;
  std::optional<std::string> model_id;
  double start_s = 0;     // offset from query start
  double duration_s = 0;  // measured, retries excluded
  double excluded_s = 0;  // failed attempts and backoff
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  std::string token_source = "approximate";  // exact_bpe | approximate | recorded
  StageStatus status = StageStatus::ok;
  std::string note;
  double energy_kwh = 0;

  friend bool operator==(const StageTrace&, const StageTrace&) = default;
};

struct RunRecord {
  int schema = kRunLogSchema;
  std::string question_id;
  std::string pipeline;
  std::string timestamp;  // UTC, ISO-8601
  std::string run_window = "random";
  bool forced = false;
  std::string origin;
  int repetition = 0;
  double total_duration_s = 0;
  std::vector<StageTrace> stages;
  std::string answer;
  EnergyBreakdown energy;

  [[nodiscard]] StageStatus status() const {
    StageStatus s = StageStatus::ok;
    for (const auto& t : stages) {
      if (t.status == StageStatus::error) return StageStatus::error;
      if (t.status == StageStatus::degraded) s = StageStatus::degraded;
    }
    return s;
  }

  [[nodiscard]] bool successful() const { return status() != StageStatus::error; }

  /// Output tokens of the answer-generating stage(s).
  [[nodiscard]] std::int64_t answer_tokens() const {
    std::int64_t n = 0;
    for (const auto& t : stages) {
      if (t.kind == StageKind::llm_inference) n += t.output_tokens;
    }
    return n;
  }

  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

inline nlohmann::ordered_json to_json(const StageTrace& t) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(t.kind);
  j["executor"] = to_string(t.executor);
  j["model_id"] = t.model_id ? nlohmann::ordered_json(*t.model_id) : nlohmann::ordered_json(nullptr);
  j["start_s"] = t.start_s;
  j["duration_s"] = t.duration_s;
  j["excluded_s"] = t.excluded_s;
  j["input_tokens"] = t.input_tokens;
  j["output_tokens"] = t.output_tokens;
  j["token_source"] = t.token_source;
  j["status"] = to_string(t.status);
  j["note"] = t.note;
  j["energy_kwh"] = t.energy_kwh;
  return j;
}

inline nlohmann::ordered_json to_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["schema"] = r.schema;
  j["question_id"] = r.question_id;
  j["pipeline"] = r.pipeline;
  j["timestamp"] = r.timestamp;
  j["run_window"] = r.run_window;
  j["forced"] = r.forced;
  j["origin"] = r.origin;
  j["repetition"] = r.repetition;
  j["status"] = to_string(r.status());
  j["total_duration_s"] = r.total_duration_s;
  j["stages"] = nlohmann::ordered_json::array();
  for (const auto& t : r.stages) j["stages"].push_back(to_json(t));
  j["answer"] = r.answer;
  j["energy"] = {{"retrieval_kwh", r.energy.retrieval_kwh},
                 {"inference_kwh", r.energy.inference_kwh},
                 {"hallucination_kwh", r.energy.hallucination_kwh},
                 {"total_kwh", r.energy.total_kwh}};
  return j;
}

inline std::string to_log_line(const RunRecord& r) { return to_json(r).dump(); }

namespace detail {

template <typename T, typename J>
T required(const J& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(Errc::schema, std::string("run record is missing '") + key + "'");
  try {
    return it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(Errc::schema, std::string("run record field '") + key + "' has the wrong type");
  }
}

}  // namespace detail

inline RunRecord record_from_json(const nlohmann::json& j) {
  using detail::required;
  if (!j.is_object()) throw Error(Errc::schema, "run record is not a JSON object");
  if (!j.contains("schema") || !j["schema"].is_number_integer()) {
    throw Error(Errc::migration, "run record has no schema version (expected " + std::to_string(kRunLogSchema) + ")");
  }
  const int schema = j["schema"].get<int>();
  if (schema != kRunLogSchema) {
    throw Error(Errc::migration, "run-log schema version " + std::to_string(schema) +
                                     " cannot be read by this build (supports version " +
                                     std::to_string(kRunLogSchema) + ")");
  }
  RunRecord r;
  r.question_id = required<std::string>(j, "question_id");
  r.pipeline = required<std::string>(j, "pipeline");
  r.timestamp = required<std::string>(j, "timestamp");
  r.run_window = required<std::string>(j, "run_window");
  r.forced = j.value("forced", false);
  r.origin = j.value("origin", std::string());
  r.repetition = j.value("repetition", 0);
  r.total_duration_s = required<double>(j, "total_duration_s");
  r.answer = j.value("answer", std::string());
  const auto& stages = j.at("stages");
  if (!stages.is_array()) throw Error(Errc::schema, "run record 'stages' must be an array");
  for (const auto& s : stages) {
    StageTrace t;
    t.kind = parse_stage_kind(required<std::string>(s, "kind"));
    t.executor = parse_executor(required<std::string>(s, "executor"));
    if (auto m = s.find("model_id"); m != s.end() && m->is_string()) t.model_id = m->get<std::string>();
    t.start_s = required<double>(s, "start_s");
    t.duration_s = required<double>(s, "duration_s");
    t.excluded_s = s.value("excluded_s", 0.0);
    t.input_tokens = required<std::int64_t>(s, "input_tokens");
    t.output_tokens = required<std::int64_t>(s, "output_tokens");
    t.token_source = s.value("token_source", std::string("recorded"));
    t.status = parse_stage_status(required<std::string>(s, "status"));
    t.note = s.value("note", std::string());
    t.energy_kwh = required<double>(s, "energy_kwh");
    if (!(t.duration_s >= 0)) throw Error(Errc::schema, "stage duration must be >= 0");
    r.stages.push_back(std::move(t));
  }
  const auto& e = j.at("energy");
  r.energy.retrieval_kwh = required<double>(e, "retrieval_kwh");
  r.energy.inference_kwh = required<double>(e, "inference_kwh");
  r.energy.hallucination_kwh = required<double>(e, "hallucination_kwh");
  r.energy.total_kwh = required<double>(e, "total_kwh");
  return r;
}

inline RunRecord parse_log_line(std::string_view line) {
  const auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded()) throw Error(Errc::schema, "run-log line is not valid JSON");
  return record_from_json(j);
}

inline double trace_energy_kwh(const StageTrace& t, const ProfileRegistry& profiles) {
  return stage_energy_kwh(t.executor, t.model_id.value_or(""), t.duration_s, profiles);
}

inline EnergyBreakdown breakdown_from_traces(const std::vector<StageTrace>& traces) {
  std::vector<std::pair<StageKind, double>> parts;
  for (const auto& t : traces) parts.emplace_back(t.kind, t.energy_kwh);
  return total_query_energy(parts);
}

/// Re-derives every stage energy and the breakdown from durations and the
/// profile registry. Returns a description of the first mismatch, if any.
inline std::optional<std::string> verify_record_energy(const RunRecord& r, const ProfileRegistry& profiles) {
  std::vector<StageTrace> traces = r.stages;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    traces[i].energy_kwh = trace_energy_kwh(traces[i], profiles);
    if (traces[i].energy_kwh != r.stages[i].energy_kwh) {
      return "stage " + std::to_string(i) + " (" + std::string(to_string(traces[i].kind)) + ") energy_kwh " +
             nlohmann::json(r.stages[i].energy_kwh).dump() + " != recomputed " +
             nlohmann::json(traces[i].energy_kwh).dump();
    }
  }
  const auto b = breakdown_from_traces(traces);
  auto check = [](const char* name, double stored, double derived) -> std::optional<std::string> {
    if (stored == derived) return std::nullopt;
    return std::string("energy.") + name + " " + nlohmann::json(stored).dump() + " != recomputed " +
           nlohmann::json(derived).dump();
  };
  if (auto m = check("retrieval_kwh", r.energy.retrieval_kwh, b.retrieval_kwh)) return m;
  if (auto m = check("inference_kwh", r.energy.inference_kwh, b.inference_kwh)) return m;
  if (auto m = check("hallucination_kwh", r.energy.hallucination_kwh, b.hallucination_kwh)) return m;
  if (auto m = check("total_kwh", r.energy.total_kwh, b.total_kwh)) return m;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Drivers and execution

/// What the stages of one query have produced so far.
struct StageContext {
  std::string query;
  std::optional<std::string> theme;
  std::vector<Chunk> chunks;
  std::string draft;
  std::string answer;
};

struct StageRequest {
  const PipelineSpec& pipeline;
  std::size_t index;
  const StageSpec& stage;
  const QuestionItem& question;
  const StageContext& context;
};

struct StageOutcome {
  StageStatus status = StageStatus::ok;
  std::string note;
  std::string input_text;  // counted after the stage finishes
  std::string output_text;
  std::optional<std::int64_t> input_tokens;  // set by drivers that know the count
  std::optional<std::int64_t> output_tokens;
  std::optional<std::string> token_source;
  Nanos excluded{0};

  std::optional<std::string> theme;
  std::optional<std::vector<Chunk>> chunks;
};

class StageDriver {
 public:
  virtual ~StageDriver() = default;
  /// Why this driver cannot run `stage`, or nullopt when it can.
  [[nodiscard]] virtual std::optional<std::string> unsupported(const StageSpec& stage) const = 0;
  /// Called before the stage clock starts.
  virtual void begin_stage(const StageRequest&) {}
  virtual StageOutcome run_stage(const StageRequest& request) = 0;
  /// Called after the last executed stage, before the total is read.
  virtual void end_query() {}
};

struct DriverSet {
  StageDriver& driver;
  const ProfileRegistry& profiles;
  const Tokenizer& tokenizer;
  WallClock& wall;
};

struct RunLabels {
  std::string run_window = "random";
  bool forced = false;
  std::string origin;
  int repetition = 0;
  std::optional<std::string> timestamp;  // replay keeps the recorded one
};

/// Runs the stages strictly in order, timing each one on `clock`. A stage
/// error ends the query; the record is still complete with the error trace.
inline RunRecord execute_pipeline(const PipelineSpec& spec, const QuestionItem& question, DriverSet drivers,
                                  MonotonicClock& clock, const RunLabels& labels = {}) {
  spec.validate();
  for (const auto& stage : spec.stages) {
    if (auto why = drivers.driver.unsupported(stage)) {
      throw Error(Errc::configuration, "pipeline '" + spec.name + "': " + *why);
    }
    if (stage.executor == Executor::llm) (void)drivers.profiles.llm(*stage.model_id);
  }

  RunRecord record;
  record.question_id = question.id;
  record.pipeline = spec.name;
  record.run_window = labels.run_window;
  record.forced = labels.forced;
  record.origin = labels.origin;
  record.repetition = labels.repetition;
  record.timestamp = labels.timestamp ? *labels.timestamp : format_utc(drivers.wall.now_utc());

  StageContext ctx;
  ctx.query = question.text;
  const Instant query_start = clock.now();
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const auto& stage = spec.stages[i];
    const StageRequest request{spec, i, stage, question, ctx};
    drivers.driver.begin_stage(request);
    const Instant start = clock.now();
    StageOutcome outcome;
    try {
      outcome = drivers.driver.run_stage(request);
    } catch (const StageError& e) {
      outcome = {};
      outcome.status = StageStatus::error;
      outcome.note = e.what();
    } catch (const Error& e) {
      if (e.code() == Errc::configuration) throw;
      outcome = {};
      outcome.status = StageStatus::error;
      outcome.note = e.what();
    }
    const Instant end = clock.now();

    StageTrace t;
    t.kind = stage.kind;
    t.executor = stage.executor;
    t.model_id = stage.model_id;
    t.start_s = to_seconds(start.since_origin - query_start.since_origin);
    auto measured = end.since_origin - start.since_origin - outcome.excluded;
    if (measured < Nanos::zero()) measured = Nanos::zero();
    t.duration_s = to_seconds(measured);
    t.excluded_s = to_seconds(outcome.excluded);
    t.status = outcome.status;
    t.note = outcome.note;
    if (outcome.input_tokens || outcome.output_tokens) {
      t.input_tokens = outcome.input_tokens.value_or(0);
      t.output_tokens = outcome.output_tokens.value_or(0);
      t.token_source = outcome.token_source.value_or("recorded");
    } else {
      t.input_tokens = drivers.tokenizer.count(outcome.input_text).count;
      t.output_tokens = drivers.tokenizer.count(outcome.output_text).count;
      t.token_source = std::string(to_string(drivers.tokenizer.spec().mode));
    }
    t.energy_kwh = trace_energy_kwh(t, drivers.profiles);
    record.stages.push_back(t);
    if (outcome.status == StageStatus::error) break;

    if (outcome.theme) ctx.theme = outcome.theme;
    if (outcome.chunks) ctx.chunks = std::move(*outcome.chunks);
    switch (stage.kind) {
      case StageKind::llm_inference:
        ctx.draft = outcome.output_text;
        ctx.answer = outcome.output_text;
        break;
      case StageKind::hallucination_check:
        ctx.answer = outcome.output_text;
        break;
      default:
        break;
    }
  }
  drivers.driver.end_query();
  record.total_duration_s = to_seconds(clock.now().since_origin - query_start.since_origin);
  record.answer = ctx.answer;
  record.energy = breakdown_from_traces(record.stages);
  return record;
}

// ---------------------------------------------------------------------------
// Prompts used by the live driver

struct ClassifyResult {
  std::string theme;
  bool degraded = false;
  std::string prompt_text;
  ChatReply reply;
};

/// Asks the model to pick one theme. A reply outside the list falls back to
/// `default_theme` and is flagged degraded.
inline ClassifyResult classify_query(std::string_view query, LlmClient& llm, const std::string& model,
                                     const std::vector<std::string>& themes, std::optional<std::string> default_theme = {}) {
  if (themes.empty()) throw Error(Errc::configuration, "query classification needs at least one theme");
  std::string list;
  for (const auto& t : themes) list += (list.empty() ? "" : ", ") + t;
  ChatRequest req;
  req.model = model;
  req.temperature = 0.0;
  const std::string system =
      "Classify the user's question into exactly one of these themes: " + list + ". Reply with the theme id only.";
  req.messages = {{"system", system}, {"user", std::string(query)}};
  ClassifyResult out;
  out.prompt_text = system + "\n" + std::string(query);
  out.reply = llm.chat(req);
  auto answer = detail::lower_ascii(detail::trim(out.reply.text));
  while (!answer.empty() && (answer.back() == '.' || answer.back() == '"' || answer.back() == '\'')) answer.pop_back();
  while (!answer.empty() && (answer.front() == '"' || answer.front() == '\'')) answer.erase(answer.begin());
  for (const auto& t : themes) {
    if (detail::lower_ascii(t) == answer) {
      out.theme = t;
      return out;
    }
  }
  out.theme = default_theme.value_or(themes.front());
  out.degraded = true;
  return out;
}

inline ChatRequest generation_request(const PipelineSpec& spec, const StageSpec& stage, std::string_view question,
                                      const std::vector<Chunk>& chunks) {
  ChatRequest req;
  req.model = *stage.model_id;
  req.temperature = 0.0;
  std::string system = "You are an assistant for climate policy questions.";
  if (!chunks.empty()) system += " Answer using only the provided sources.";
  if (spec.max_words) {
    system += " Answer in at most " + std::to_string(*spec.max_words) + " words.";
    req.max_tokens = static_cast<int>(std::ceil(*spec.max_words * kTokensPerWord));
  }
  std::string user;
  if (!chunks.empty()) user = "Sources:\n" + format_sources(chunks) + "\nQuestion: ";
  user += question;
  req.messages = {{"system", system}, {"user", user}};
  return req;
}

inline std::string request_text(const ChatRequest& req) {
  std::string out;
  for (const auto& m : req.messages) out += (out.empty() ? "" : "\n") + m.content;
  return out;
}

}  // namespace ragenergy
