#pragma once

// Stage drivers: live (real endpoints and corpus), synthetic (seeded
// distributions on a simulated clock) and replay (recorded traces).

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ragenergy/grounding.hpp"
#include "ragenergy/llm_client.hpp"
#include "ragenergy/measurement.hpp"
#include "ragenergy/pipeline.hpp"
#include "ragenergy/vector_store.hpp"

namespace ragenergy {

namespace detail {

inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto end = s.find(sep, pos);
    if (end == std::string_view::npos) end = s.size();
    auto item = trim(s.substr(pos, end - pos));
    if (!item.empty()) out.push_back(std::move(item));
    pos = end + 1;
  }
  return out;
}

inline double param_double(const StageSpec& stage, const std::string& key, double fallback) {
  auto v = stage.param(key);
  if (!v) return fallback;
  try {
    return std::stod(*v);
  } catch (const std::exception&) {
    throw Error(Errc::configuration, "stage parameter '" + key + "' is not a number: '" + *v + "'");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Live

struct LiveDriverConfig {
  std::vector<std::string> themes = {"ndc_targets", "ndc_mitigation", "ndc_adaptation", "ndc_finance", "general"};
  std::optional<std::string> default_theme = std::string("general");
  double threshold = kDefaultGroundingThreshold;
  std::size_t top_k = kDefaultTopK;
  VerificationPrompt verification;
};

/// Executes stages for real: chat calls through LlmClient, brute-force
/// retrieval over the corpus, and cosine or LLM grounding.
class LiveDriver final : public StageDriver {
 public:
  LiveDriver(std::shared_ptr<VectorStore> store, std::shared_ptr<EmbeddingProvider> embedder,
             LiveDriverConfig config = {})
      : store_(std::move(store)), embedder_(std::move(embedder)), config_(std::move(config)) {}

  /// Client serving `model_id`; an empty id registers the fallback client.
  void set_llm(const std::string& model_id, std::shared_ptr<LlmClient> client) {
    clients_[normalize_model_id(model_id)] = std::move(client);
  }

  [[nodiscard]] std::optional<std::string> unsupported(const StageSpec& stage) const override {
    if (stage.executor == Executor::llm && !client_for(*stage.model_id)) {
      return "no LLM client configured for model '" + *stage.model_id + "'";
    }
    if (stage.kind == StageKind::retrieval && !store_) return "retrieval stage needs a corpus";
    if (stage.kind == StageKind::hallucination_check && stage.executor == Executor::cpu && !sentence_embedder()) {
      return "cosine grounding needs an embedding provider";
    }
    return std::nullopt;
  }

  StageOutcome run_stage(const StageRequest& req) override {
    const auto& stage = req.stage;
    const auto& ctx = req.context;
    StageOutcome out;
    switch (stage.kind) {
      case StageKind::classification: {
        auto themes = stage.param("themes") ? detail::split_list(*stage.param("themes")) : config_.themes;
        auto fallback = stage.param("default_theme") ? stage.param("default_theme") : config_.default_theme;
        auto r = classify_query(ctx.query, *client_for(*stage.model_id), *stage.model_id, themes, fallback);
        out.theme = r.theme;
        out.input_text = r.prompt_text;
        out.output_text = r.reply.text;
        out.excluded = r.reply.excluded;
        if (r.degraded) {
          out.status = StageStatus::degraded;
          out.note = "classifier reply outside theme list; using '" + r.theme + "'";
        }
        break;
      }
      case StageKind::retrieval: {
        const auto top_k = static_cast<std::size_t>(detail::param_double(stage, "top_k", static_cast<double>(config_.top_k)));
        std::optional<std::string> collection;
        if (ctx.theme && store_->has_collection(*ctx.theme)) collection = ctx.theme;
        out.chunks = retrieve(ctx.query, *store_, top_k, collection);
        out.input_text = ctx.query;
        break;
      }
      case StageKind::llm_inference: {
        const auto request = generation_request(req.pipeline, stage, ctx.query, ctx.chunks);
        auto reply = client_for(*stage.model_id)->chat(request);
        out.input_text = request_text(request);
        out.output_text = reply.text;
        out.excluded = reply.excluded;
        break;
      }
      case StageKind::hallucination_check: {
        out.input_text = ctx.draft;
        if (stage.executor == Executor::cpu) {
          if (segment_sentences(ctx.draft).empty()) break;
          const double threshold = detail::param_double(stage, "threshold", config_.threshold);
          auto filtered = filter_response(ctx.draft, ctx.chunks, *sentence_embedder(), threshold);
          out.output_text = filtered.text();
          out.note = std::to_string(filtered.kept.size()) + "/" + std::to_string(filtered.verdicts.size()) +
                     " sentences kept";
        } else {
          auto r = run_llm_hallucination_check(ctx.draft, ctx.chunks, *client_for(*stage.model_id), *stage.model_id,
                                               config_.verification);
          out.input_text = r.prompt_text;
          out.excluded = r.reply.excluded;
          if (r.format_error) {
            out.status = StageStatus::degraded;
            out.note = "unverified answer: " + *r.format_error;
            out.output_text = ctx.draft;
          } else {
            out.output_text = r.kept_text();
            std::size_t kept = 0;
            for (const auto& v : r.verdicts) kept += v.kept;
            out.note = std::to_string(kept) + "/" + std::to_string(r.verdicts.size()) + " sentences kept";
          }
        }
        break;
      }
    }
    return out;
  }

 private:
  [[nodiscard]] LlmClient* client_for(const std::string& model_id) const {
    if (auto it = clients_.find(normalize_model_id(model_id)); it != clients_.end()) return it->second.get();
    if (auto it = clients_.find(""); it != clients_.end()) return it->second.get();
    return nullptr;
  }

  [[nodiscard]] EmbeddingProvider* sentence_embedder() const {
    if (embedder_) return embedder_.get();
    return store_ ? store_->embedder() : nullptr;
  }

  std::shared_ptr<VectorStore> store_;
  std::shared_ptr<EmbeddingProvider> embedder_;
  LiveDriverConfig config_;
  std::map<std::string, std::shared_ptr<LlmClient>> clients_;
};

// ---------------------------------------------------------------------------
// Synthetic

/// constant(a) | uniform[a, b) | lognormal(mu = a, sigma = b)
struct Distribution {
  enum class Shape { constant, uniform, lognormal };
  Shape shape = Shape::constant;
  double a = 0;
  double b = 0;

  static Distribution constant(double v) { return {Shape::constant, v, 0}; }
  static Distribution uniform(double lo, double hi) { return {Shape::uniform, lo, hi}; }
  /// Log-normal with the given median and log-space sigma.
  static Distribution lognormal_median(double median, double sigma) {
    return {Shape::lognormal, std::log(median), sigma};
  }

  // Draws are built directly from mt19937_64 output so a seed produces the
  // same values with every standard library.
  double sample(std::mt19937_64& rng) const {
    auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    switch (shape) {
      case Shape::constant: return a;
      case Shape::uniform: return a + (b - a) * unit();
      case Shape::lognormal: {
        const double u1 = 1.0 - unit();  // (0, 1]
        const double u2 = unit();
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
        return std::exp(a + b * z);
      }
    }
    return a;
  }
};

struct SyntheticStageModel {
  Distribution duration_s = Distribution::constant(1.0);
  Distribution input_tokens = Distribution::constant(0);
  Distribution output_tokens = Distribution::constant(0);
  /// When set, duration = output_tokens / tokens_per_second + latency.
  std::optional<double> tokens_per_second;
  Distribution latency_s = Distribution::constant(0);
};

struct SyntheticConfig {
  std::uint64_t seed = 0;
  /// Keyed by "<pipeline>/<stage kind>" or "<stage kind>"; the pipeline-specific
  /// entry wins.
  std::map<std::string, SyntheticStageModel> models;

  /// Representative models whose medians land near published per-query
  /// figures for the four built-in workflows.
  static SyntheticConfig defaults(std::uint64_t seed) {
    using D = Distribution;
    SyntheticConfig c;
    c.seed = seed;
    c.models["classification"] = {D::lognormal_median(2.3, 0.25), D::constant(180), D::constant(4), std::nullopt, D::constant(0)};
    c.models["retrieval"] = {D::lognormal_median(0.45, 0.2), D::constant(20), D::constant(0), std::nullopt, D::constant(0)};
    c.models["llm_inference"] = {D::constant(0), D::constant(900), D::lognormal_median(600, 0.35), 60.0,
                                 D::lognormal_median(0.6, 0.3)};
    c.models["hallucination_check"] = {D::lognormal_median(13.0, 0.3), D::constant(2500), D::constant(40), std::nullopt,
                                       D::constant(0)};
    c.models["cnz/llm_inference"] = {D::constant(0), D::constant(1500), D::lognormal_median(265, 0.1), 80.0,
                                     D::lognormal_median(0.4, 0.3)};
    c.models["cnz/hallucination_check"] = {D::lognormal_median(3.6, 0.3), D::constant(250), D::constant(200),
                                           std::nullopt, D::constant(0)};
    c.models["ndc/llm_inference"] = {D::constant(0), D::constant(2200), D::lognormal_median(1200, 0.35), 50.0,
                                     D::lognormal_median(0.8, 0.3)};
    c.models["direct/llm_inference"] = {D::constant(0), D::constant(30), D::lognormal_median(600, 0.35), 60.0,
                                        D::lognormal_median(0.6, 0.3)};
    c.models["direct-capped/llm_inference"] = {D::constant(0), D::constant(45), D::lognormal_median(260, 0.1), 60.0,
                                               D::lognormal_median(0.4, 0.3)};
    return c;
  }
};

/// Fabricates stage results from seeded distributions and advances a manual
/// clock by the drawn duration, so records are reproducible bit for bit.
class SyntheticDriver final : public StageDriver {
 public:
  SyntheticDriver(SyntheticConfig config, ManualClock& clock)
      : config_(std::move(config)), clock_(clock), rng_(config_.seed) {}

  [[nodiscard]] std::optional<std::string> unsupported(const StageSpec& stage) const override {
    if (!model_for("", stage.kind)) return "no synthetic model for stage kind " + std::string(to_string(stage.kind));
    return std::nullopt;
  }

  StageOutcome run_stage(const StageRequest& req) override {
    const auto* m = model_for(req.pipeline.name, req.stage.kind);
    StageOutcome out;
    const auto in_tokens = std::llround(std::max(0.0, m->input_tokens.sample(rng_)));
    const auto out_tokens = std::llround(std::max(0.0, m->output_tokens.sample(rng_)));
    double duration = m->tokens_per_second
                          ? static_cast<double>(out_tokens) / *m->tokens_per_second + m->latency_s.sample(rng_)
                          : m->duration_s.sample(rng_);
    clock_.advance_seconds(std::max(0.0, duration));
    out.input_tokens = in_tokens;
    out.output_tokens = out_tokens;
    switch (req.stage.kind) {
      case StageKind::classification: {
        auto themes = req.stage.param("themes") ? detail::split_list(*req.stage.param("themes"))
                                                : std::vector<std::string>{"general"};
        out.theme = themes.empty() ? std::string("general") : themes.front();
        out.output_text = *out.theme;
        break;
      }
      case StageKind::retrieval:
        out.chunks = std::vector<Chunk>{};
        break;
      case StageKind::llm_inference:
        out.output_text = "Synthetic answer to question " + req.question.id + " (" + std::to_string(out_tokens) +
                          " tokens).";
        break;
      case StageKind::hallucination_check:
        out.output_text = req.context.draft;
        break;
    }
    return out;
  }

 private:
  [[nodiscard]] const SyntheticStageModel* model_for(const std::string& pipeline, StageKind kind) const {
    const std::string k(to_string(kind));
    if (!pipeline.empty()) {
      if (auto it = config_.models.find(pipeline + "/" + k); it != config_.models.end()) return &it->second;
    }
    auto it = config_.models.find(k);
    return it == config_.models.end() ? nullptr : &it->second;
  }

  SyntheticConfig config_;
  ManualClock& clock_;
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Replay

/// Plays back one recorded query: stage offsets, durations, excluded time,
/// token counts and statuses come from the record.
class ReplayDriver final : public StageDriver {
 public:
  ReplayDriver(RunRecord record, ManualClock& clock) : record_(std::move(record)), clock_(clock) {}

  [[nodiscard]] std::optional<std::string> unsupported(const StageSpec&) const override { return std::nullopt; }

  void begin_stage(const StageRequest& req) override {
    if (req.index == 0) origin_ = clock_.now();
    clock_.advance_to(at(to_nanos(trace(req.index).start_s)));
  }

  StageOutcome run_stage(const StageRequest& req) override {
    const auto& t = trace(req.index);
    StageOutcome out;
    const Nanos excluded = to_nanos(t.excluded_s);
    clock_.advance(to_nanos(t.duration_s) + excluded);
    out.excluded = excluded;
    out.status = t.status;
    out.note = t.note;
    out.input_tokens = t.input_tokens;
    out.output_tokens = t.output_tokens;
    out.token_source = t.token_source;
    out.output_text = record_.answer;
    return out;
  }

  void end_query() override { clock_.advance_to(at(to_nanos(record_.total_duration_s))); }

 private:
  [[nodiscard]] const StageTrace& trace(std::size_t i) const {
    if (i >= record_.stages.size()) throw Error(Errc::schema, "replayed record has fewer stages than its pipeline");
    return record_.stages[i];
  }
  [[nodiscard]] Instant at(Nanos offset) const { return {origin_.since_origin + offset}; }

  RunRecord record_;
  ManualClock& clock_;
  Instant origin_{};
};

/// Pipeline shape implied by a record's traces.
inline PipelineSpec spec_from_record(const RunRecord& r) {
  PipelineSpec spec;
  spec.name = r.pipeline;
  spec.display_name = r.pipeline;
  for (const auto& t : r.stages) spec.stages.push_back({t.kind, t.executor, t.model_id, {}});
  return spec;
}

inline RunRecord replay_record(const RunRecord& r, const ProfileRegistry& profiles, const Tokenizer& tokenizer) {
  ManualClock clock;
  ReplayDriver driver(r, clock);
  SimulatedTime wall(parse_utc(r.timestamp));
  RunLabels labels{r.run_window, r.forced, r.origin, r.repetition, r.timestamp};
  QuestionItem q{r.question_id, "(replayed)", BloomClass::knowledge, {}};
  return execute_pipeline(spec_from_record(r), q, DriverSet{driver, profiles, tokenizer, wall}, clock, labels);
}

inline std::vector<RunRecord> replay_log(const std::vector<RunRecord>& records, const ProfileRegistry& profiles,
                                         const Tokenizer& tokenizer) {
  std::vector<RunRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(replay_record(r, profiles, tokenizer));
  return out;
}

}  // namespace ragenergy
