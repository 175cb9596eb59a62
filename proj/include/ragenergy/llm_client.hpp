#pragma once

// Chat-completions and embeddings clients for OpenAI-compatible endpoints,
// plus the retry loop shared by both.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "ragenergy/error.hpp"
#include "ragenergy/measurement.hpp"

namespace ragenergy {

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  std::optional<int> max_tokens;
};

struct ChatReply {
  std::string text;
  std::optional<std::int64_t> prompt_tokens;
  std::optional<std::int64_t> completion_tokens;
  Nanos excluded{0};  // time spent in failed attempts and backoff
  int attempts = 1;
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual ChatReply chat(const ChatRequest& request) = 0;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<float> embed(std::string_view text) = 0;
};

// ---------------------------------------------------------------------------
// Retries

struct RetryPolicy {
  int max_retries = 2;
  Nanos initial_backoff = std::chrono::milliseconds(500);
  double multiplier = 2.0;
};

/// Thrown by a single attempt. `produced_tokens` marks an attempt that got as
/// far as generating output; its cost cannot be separated from the run.
struct AttemptError {
  std::string message;
  bool retryable = true;
  bool produced_tokens = false;
};

using Sleeper = std::function<void(Nanos)>;

inline Sleeper real_sleeper() {
  return [](Nanos d) { std::this_thread::sleep_for(d); };
}

template <typename T>
struct RetryResult {
  T value;
  Nanos excluded{0};
  int attempts = 1;
};

/// Runs `attempt` with exponential backoff. Failed attempts that never
/// produced tokens, and the backoff after them, are reported as excluded
/// time. A failed attempt that did produce tokens discards the run.
template <typename Fn>
auto with_retries(Fn&& attempt, const RetryPolicy& policy, MonotonicClock& clock, const Sleeper& sleep)
    -> RetryResult<decltype(attempt())> {
  Nanos excluded{0};
  Nanos backoff = policy.initial_backoff;
  for (int n = 1;; ++n) {
    const Instant start = clock.now();
    try {
      return {attempt(), excluded, n};
    } catch (const AttemptError& e) {
      if (e.produced_tokens) {
        throw StageError("run discarded: failed attempt " + std::to_string(n) + " produced tokens (" + e.message + ")");
      }
      if (!e.retryable || n > policy.max_retries) {
        throw StageError(e.message + " (after " + std::to_string(n) + " attempt" + (n == 1 ? "" : "s") + ")");
      }
      excluded += clock.now().since_origin - start.since_origin;
      sleep(backoff);
      excluded += backoff;
      backoff = Nanos(static_cast<Nanos::rep>(static_cast<double>(backoff.count()) * policy.multiplier));
    }
  }
}

// ---------------------------------------------------------------------------
// HTTP

struct EndpointConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key_env = "OPENAI_API_KEY";
  std::chrono::seconds deadline{120};
  RetryPolicy retry;
};

namespace detail {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error(Errc::configuration, "endpoint URL needs a scheme: '" + url + "'");
  const auto path = url.find('/', scheme + 3);
  SplitUrl out{url.substr(0, path), path == std::string::npos ? "" : url.substr(path)};
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

inline std::string env_or_empty(const std::string& name) {
  if (name.empty()) return {};
  const char* v = std::getenv(name.c_str());
  return v ? std::string(v) : std::string();
}

/// Shared POST-with-retries plumbing for the two endpoint kinds.
class JsonEndpoint {
 public:
  explicit JsonEndpoint(EndpointConfig config, std::shared_ptr<MonotonicClock> clock = nullptr,
                        Sleeper sleep = real_sleeper())
      : config_(std::move(config)),
        url_(split_url(config_.base_url)),
        api_key_(env_or_empty(config_.api_key_env)),
        clock_(clock ? std::move(clock) : std::make_shared<SteadyClock>()),
        sleep_(std::move(sleep)) {}

  RetryResult<nlohmann::json> post(const std::string& route, const nlohmann::json& body) {
    auto attempt = [&]() -> nlohmann::json {
      httplib::Client client(url_.origin);
      client.set_connection_timeout(config_.deadline);
      client.set_read_timeout(config_.deadline);
      client.set_write_timeout(config_.deadline);
      httplib::Headers headers;
      if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
      auto res = client.Post(url_.prefix + route, headers, body.dump(), "application/json");
      if (!res) {
        throw AttemptError{"transport error contacting " + url_.origin + ": " + httplib::to_string(res.error()), true,
                           false};
      }
      if (res->status == 429 || res->status >= 500) {
        throw AttemptError{"HTTP " + std::to_string(res->status) + " from " + route, true, false};
      }
      if (res->status != 200) {
        throw AttemptError{"HTTP " + std::to_string(res->status) + " from " + route + ": " + res->body.substr(0, 200),
                           false, false};
      }
      auto parsed = nlohmann::json::parse(res->body, nullptr, false);
      if (parsed.is_discarded() || !parsed.is_object()) {
        throw AttemptError{"unparseable response body from " + route, false, true};
      }
      return parsed;
    };
    return with_retries(attempt, config_.retry, *clock_, sleep_);
  }

 private:
  EndpointConfig config_;
  SplitUrl url_;
  std::string api_key_;
  std::shared_ptr<MonotonicClock> clock_;
  Sleeper sleep_;
};

}  // namespace detail

class OpenAiChatClient final : public LlmClient {
 public:
  explicit OpenAiChatClient(EndpointConfig config, std::shared_ptr<MonotonicClock> clock = nullptr,
                            Sleeper sleep = real_sleeper())
      : endpoint_(std::move(config), std::move(clock), std::move(sleep)) {}

  ChatReply chat(const ChatRequest& request) override {
    nlohmann::json body = {{"model", request.model}, {"temperature", request.temperature}};
    body["messages"] = nlohmann::json::array();
    for (const auto& m : request.messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    if (request.max_tokens) body["max_tokens"] = *request.max_tokens;

    auto result = endpoint_.post("/chat/completions", body);
    const auto& j = result.value;
    ChatReply reply;
    try {
      reply.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw StageError("run discarded: chat response has no choices[0].message.content");
    }
    if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
      if (u->contains("prompt_tokens")) reply.prompt_tokens = (*u)["prompt_tokens"].get<std::int64_t>();
      if (u->contains("completion_tokens")) reply.completion_tokens = (*u)["completion_tokens"].get<std::int64_t>();
    }
    reply.excluded = result.excluded;
    reply.attempts = result.attempts;
    return reply;
  }

 private:
  detail::JsonEndpoint endpoint_;
};

class OpenAiEmbedder final : public EmbeddingProvider {
 public:
  OpenAiEmbedder(EndpointConfig config, std::string model, std::shared_ptr<MonotonicClock> clock = nullptr,
                 Sleeper sleep = real_sleeper())
      : endpoint_(std::move(config), std::move(clock), std::move(sleep)), model_(std::move(model)) {}

  std::vector<float> embed(std::string_view text) override {
    nlohmann::json body = {{"model", model_}, {"input", nlohmann::json::array({std::string(text)})}};
    auto result = endpoint_.post("/embeddings", body);
    try {
      return result.value.at("data").at(0).at("embedding").get<std::vector<float>>();
    } catch (const nlohmann::json::exception&) {
      throw StageError("embedding response has no data[0].embedding");
    }
  }

 private:
  detail::JsonEndpoint endpoint_;
  std::string model_;
};

}  // namespace ragenergy
