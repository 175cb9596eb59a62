#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "httplib.h"
#include "ragenergy/llm_client.hpp"

using namespace ragenergy;
using namespace std::chrono_literals;

namespace {

/// Local OpenAI-shaped server whose replies are scripted per request.
class MockServer {
 public:
  explicit MockServer(std::function<void(const httplib::Request&, httplib::Response&, int)> handler)
      : handler_(std::move(handler)) {
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
      last_body = req.body;
      last_auth = req.get_header_value("Authorization");
      handler_(req, res, ++hits);
    };
    server_.Post("/v1/chat/completions", route);
    server_.Post("/v1/embeddings", route);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockServer() {
    server_.stop();
    thread_.join();
  }
  [[nodiscard]] std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

  std::atomic<int> hits{0};
  std::string last_body;
  std::string last_auth;

 private:
  std::function<void(const httplib::Request&, httplib::Response&, int)> handler_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

const char* kCompletion =
    R"({"choices":[{"message":{"role":"assistant","content":"Net zero by 2050."}}],"usage":{"prompt_tokens":12,"completion_tokens":5}})";

struct RecordingSleeper {
  std::vector<Nanos> waits;
  Sleeper fn() {
    return [this](Nanos d) { waits.push_back(d); };
  }
};

EndpointConfig endpoint(const std::string& url) {
  EndpointConfig c;
  c.base_url = url;
  c.api_key_env = "RAGENERGY_TEST_KEY";
  c.deadline = 5s;
  return c;
}

ChatRequest request() {
  ChatRequest r;
  r.model = "gpt-4o-mini";
  r.messages = {{"system", "be brief"}, {"user", "net zero?"}};
  r.max_tokens = 300;
  return r;
}

}  // namespace

TEST(Retries, BackoffDoublesAndExcludedTimeAccumulates) {
  ManualClock clock;
  RecordingSleeper sleeper;
  int calls = 0;
  auto attempt = [&]() -> int {
    clock.advance(100ms);
    if (++calls < 3) throw AttemptError{"busy", true, false};
    return 7;
  };
  const auto r = with_retries(attempt, RetryPolicy{}, clock, sleeper.fn());
  EXPECT_EQ(r.value, 7);
  EXPECT_EQ(r.attempts, 3);
  EXPECT_EQ(sleeper.waits, (std::vector<Nanos>{500ms, 1000ms}));
  EXPECT_EQ(r.excluded, Nanos(100ms + 500ms + 100ms + 1000ms));
}

TEST(Retries, GivesUpAfterMaxRetries) {
  ManualClock clock;
  RecordingSleeper sleeper;
  int calls = 0;
  auto attempt = [&]() -> int {
    ++calls;
    throw AttemptError{"busy", true, false};
  };
  EXPECT_THROW((void)with_retries(attempt, RetryPolicy{}, clock, sleeper.fn()), StageError);
  EXPECT_EQ(calls, 3);
}

TEST(Retries, NonRetryableAndTokenProducingFailuresStopImmediately) {
  ManualClock clock;
  RecordingSleeper sleeper;
  int calls = 0;
  auto client_error = [&]() -> int {
    ++calls;
    throw AttemptError{"bad request", false, false};
  };
  EXPECT_THROW((void)with_retries(client_error, RetryPolicy{}, clock, sleeper.fn()), StageError);
  EXPECT_EQ(calls, 1);
  calls = 0;
  auto produced = [&]() -> int {
    ++calls;
    throw AttemptError{"cut off", true, true};
  };
  try {
    (void)with_retries(produced, RetryPolicy{}, clock, sleeper.fn());
    FAIL();
  } catch (const StageError& e) {
    EXPECT_NE(std::string(e.what()).find("discarded"), std::string::npos);
  }
  EXPECT_EQ(calls, 1);
  EXPECT_TRUE(sleeper.waits.empty());
}

TEST(ChatClient, ParsesReplyAndUsage) {
  ::setenv("RAGENERGY_TEST_KEY", "secret", 1);
  MockServer server([](const httplib::Request&, httplib::Response& res, int) {
    res.set_content(kCompletion, "application/json");
  });
  OpenAiChatClient client(endpoint(server.url()));
  const auto reply = client.chat(request());
  EXPECT_EQ(reply.text, "Net zero by 2050.");
  EXPECT_EQ(reply.prompt_tokens, 12);
  EXPECT_EQ(reply.completion_tokens, 5);
  EXPECT_EQ(reply.attempts, 1);
  EXPECT_EQ(server.last_auth, "Bearer secret");
  const auto body = nlohmann::json::parse(server.last_body);
  EXPECT_EQ(body["model"], "gpt-4o-mini");
  EXPECT_EQ(body["temperature"], 0.0);
  EXPECT_EQ(body["max_tokens"], 300);
  EXPECT_EQ(body["messages"][1]["content"], "net zero?");
}

TEST(ChatClient, RetriesServerErrorsThenSucceeds) {
  MockServer server([](const httplib::Request&, httplib::Response& res, int hit) {
    if (hit == 1) {
      res.status = 503;
      return;
    }
    if (hit == 2) {
      res.status = 429;
      return;
    }
    res.set_content(kCompletion, "application/json");
  });
  RecordingSleeper sleeper;
  OpenAiChatClient client(endpoint(server.url()), nullptr, sleeper.fn());
  const auto reply = client.chat(request());
  EXPECT_EQ(reply.attempts, 3);
  EXPECT_EQ(sleeper.waits.size(), 2u);
  EXPECT_GE(reply.excluded, Nanos(1500ms));
}

TEST(ChatClient, ClientErrorIsNotRetried) {
  MockServer server([](const httplib::Request&, httplib::Response& res, int) {
    res.status = 401;
    res.set_content("{\"error\":\"bad key\"}", "application/json");
  });
  RecordingSleeper sleeper;
  OpenAiChatClient client(endpoint(server.url()), nullptr, sleeper.fn());
  EXPECT_THROW((void)client.chat(request()), StageError);
  EXPECT_EQ(server.hits.load(), 1);
}

TEST(ChatClient, UnparseableBodyDiscardsRun) {
  MockServer server([](const httplib::Request&, httplib::Response& res, int) {
    res.set_content("{\"choices\": [", "application/json");
  });
  RecordingSleeper sleeper;
  OpenAiChatClient client(endpoint(server.url()), nullptr, sleeper.fn());
  EXPECT_THROW((void)client.chat(request()), StageError);
  EXPECT_EQ(server.hits.load(), 1);
}

TEST(ChatClient, UnreachableEndpointFailsAfterRetries) {
  RecordingSleeper sleeper;
  auto cfg = endpoint("http://127.0.0.1:1/v1");
  cfg.deadline = 2s;
  OpenAiChatClient client(cfg, nullptr, sleeper.fn());
  EXPECT_THROW((void)client.chat(request()), StageError);
  EXPECT_EQ(sleeper.waits.size(), 2u);
}

TEST(Embedder, ReadsFirstEmbedding) {
  MockServer server([](const httplib::Request& req, httplib::Response& res, int) {
    const auto body = nlohmann::json::parse(req.body);
    EXPECT_EQ(body["model"], "text-embedding-3-small");
    res.set_content(R"({"data":[{"embedding":[0.5,-0.25,1.0]}]})", "application/json");
  });
  OpenAiEmbedder embedder(endpoint(server.url()), "text-embedding-3-small");
  EXPECT_EQ(embedder.embed("hello"), (std::vector<float>{0.5f, -0.25f, 1.0f}));
}

TEST(Endpoint, UrlNeedsScheme) {
  EXPECT_THROW(OpenAiChatClient(endpoint("api.openai.com/v1")), Error);
  const auto u = detail::split_url("https://api.example.com/v1/");
  EXPECT_EQ(u.origin, "https://api.example.com");
  EXPECT_EQ(u.prefix, "/v1");
}
