#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "reflectforge/gateway.hpp"

using namespace reflectforge;
using namespace reflectforge::llm;

namespace {

BackendConfig mock_config(int max_in_flight = 8) {
  BackendConfig cfg;
  cfg.kind = BackendKind::mock;
  cfg.max_in_flight = max_in_flight;
  cfg.retry = {3, 1};
  return cfg;
}

ChatRequest ask(std::string content, std::string tag = "t") {
  return ChatRequest::user(std::move(content), {}, std::move(tag));
}

std::string ok_body(const std::string& content) {
  return nlohmann::json{
      {"choices", {{{"message", {{"role", "assistant"}, {"content", content}}},
                    {"finish_reason", "stop"}}}},
      {"usage", {{"prompt_tokens", 7}, {"completion_tokens", 2}}}}
      .dump();
}

// Local OpenAI-style stub server on an ephemeral port.
class StubServer {
 public:
  explicit StubServer(std::function<void(const httplib::Request&, httplib::Response&)> h) {
    server_.Post("/v1/chat/completions", [this, h](const httplib::Request& req,
                                                   httplib::Response& res) {
      ++hits_;
      last_auth_ = req.get_header_value("Authorization");
      last_body_ = req.body;
      h(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  int hits() const { return hits_; }
  std::string last_auth() const { return last_auth_; }
  std::string last_body() const { return last_body_; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<int> hits_{0};
  std::string last_auth_;
  std::string last_body_;
};

BackendConfig http_config(const StubServer& server, const char* env = "RF_TEST_KEY") {
  BackendConfig cfg;
  cfg.kind = BackendKind::http;
  cfg.base_url = server.base_url();
  cfg.model_name = "stub-model";
  cfg.api_key_env = env;
  cfg.retry = {3, 5};
  cfg.timeout_ms = 2000;
  return cfg;
}

}  // namespace

TEST(GatewayMockTest, ScriptedEcho) {
  auto mock = script_mock({{"", {ScriptedReply::text("C")}}}, 1);
  Gateway gw(mock_config(), mock);
  auto r = gw.complete(ask("pick one"));
  EXPECT_EQ(r.content, "C");
  EXPECT_EQ(r.finish_reason, FinishReason::stop);
  EXPECT_EQ(r.attempts, 1);
}

TEST(GatewayMockTest, ScriptSequenceAndStrictExhaustion) {
  auto mock = script_mock({{"final answer", {ScriptedReply::text("A"), ScriptedReply::text("B"),
                                            ScriptedReply::text("A")}}},
                          5, /*strict=*/true);
  Gateway gw(mock_config(), mock);
  std::vector<std::string> got;
  for (int i = 0; i < 3; ++i) got.push_back(gw.complete(ask("give the final answer")).content);
  EXPECT_EQ(got, (std::vector<std::string>{"A", "B", "A"}));
  try {
    gw.complete(ask("give the final answer"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ScriptExhausted);
  }
}

TEST(GatewayMockTest, NonStrictExhaustionFallsThroughToGenerator) {
  auto mock = script_mock({{"x", {ScriptedReply::text("only")}}}, 5);
  Gateway gw(mock_config(), mock);
  EXPECT_EQ(gw.complete(ask("x")).content, "only");
  EXPECT_NE(gw.complete(ask("x", "second")).content, "only");
}

TEST(GatewayMockTest, SeededDeterminism) {
  auto run = [](std::uint64_t seed) {
    Gateway gw(mock_config(4), script_mock({}, seed));
    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 50; ++i) reqs.push_back(ask("prompt " + std::to_string(i), "r" + std::to_string(i)));
    std::vector<std::string> out;
    for (auto& r : gw.complete_many(reqs)) out.push_back(r.content);
    return out;
  };
  EXPECT_EQ(run(9), run(9));
  EXPECT_NE(run(9), run(10));
}

TEST(GatewayMockTest, BoundedConcurrencyAndOrder) {
  MockOptions opt;
  opt.seed = 3;
  opt.latency_ms = 2;
  opt.fallback = [](const ChatRequest& r, Rng&) { return "echo:" + r.tag; };
  auto mock = std::make_shared<MockBackend>(std::vector<ScriptRule>{}, opt);
  Gateway gw(mock_config(8), mock);
  std::vector<ChatRequest> reqs;
  for (int i = 0; i < 100; ++i) reqs.push_back(ask("q", "id" + std::to_string(i)));
  auto out = gw.complete_many(reqs);
  ASSERT_EQ(out.size(), 100u);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(out[i].tag, "id" + std::to_string(i));
    EXPECT_EQ(out[i].content, "echo:id" + std::to_string(i));
  }
  EXPECT_LE(mock->peak_concurrency(), 8);
  EXPECT_LE(gw.peak_in_flight(), 8);
  EXPECT_GT(mock->peak_concurrency(), 1);
}

TEST(GatewayMockTest, OrderPreservedForAnyBatchAndLimit) {
  Rng rng(42);
  for (int round = 0; round < 20; ++round) {
    const int limit = 1 + static_cast<int>(rng.index(12));
    const std::size_t n = 1 + rng.index(60);
    MockOptions opt;
    opt.fallback = [](const ChatRequest& r, Rng& g) {
      if (g.bernoulli(0.3)) std::this_thread::sleep_for(std::chrono::microseconds(200));
      return r.tag;
    };
    auto mock = std::make_shared<MockBackend>(std::vector<ScriptRule>{}, opt);
    Gateway gw(mock_config(limit), mock);
    std::vector<ChatRequest> reqs;
    for (std::size_t i = 0; i < n; ++i) reqs.push_back(ask("p", "tag-" + std::to_string(i)));
    auto out = gw.complete_many(reqs);
    for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(out[i].content, reqs[i].tag);
    EXPECT_LE(mock->peak_concurrency(), limit);
  }
}

TEST(GatewayMockTest, BatchOfOneMatchesComplete) {
  auto a = Gateway(mock_config(), script_mock({}, 77)).complete(ask("same", "k"));
  std::vector<ChatRequest> one{ask("same", "k")};
  auto b = Gateway(mock_config(), script_mock({}, 77)).complete_many(one);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(a.content, b[0].content);
  EXPECT_EQ(a.finish_reason, b[0].finish_reason);
}

TEST(GatewayMockTest, FailureIsolatedToItsPosition) {
  auto mock = script_mock({{"slow item", {ScriptedReply::fail(ErrorCode::Timeout)}, true}}, 1);
  Gateway gw(mock_config(4), mock);
  gw.set_sleeper([](auto) {});
  std::vector<ChatRequest> reqs = {ask("a", "0"), ask("slow item", "1"), ask("c", "2")};
  auto out = gw.complete_many(reqs);
  EXPECT_TRUE(out[0].ok());
  EXPECT_FALSE(out[1].ok());
  EXPECT_EQ(out[1].error, ErrorCode::Timeout);
  EXPECT_TRUE(out[2].ok());
}

TEST(GatewayMockTest, RetryBudgetAndBackoff) {
  auto mock = script_mock({{"", {ScriptedReply::fail(ErrorCode::RateLimited),
                                 ScriptedReply::fail(ErrorCode::ServerError),
                                 ScriptedReply::text("done")}}},
                          1);
  BackendConfig cfg = mock_config();
  cfg.retry = {3, 100};
  Gateway gw(cfg, mock);
  std::vector<std::int64_t> waits;
  gw.set_sleeper([&](std::chrono::milliseconds d) { waits.push_back(d.count()); });
  auto r = gw.complete(ask("x"));
  EXPECT_EQ(r.content, "done");
  EXPECT_EQ(r.attempts, 3);
  EXPECT_EQ(waits, (std::vector<std::int64_t>{100, 200}));
}

TEST(GatewayMockTest, NonRetryableAttemptsOnce) {
  auto mock = script_mock({{"", {ScriptedReply::fail(ErrorCode::ClientError)}, true}}, 1);
  Gateway gw(mock_config(), mock);
  EXPECT_THROW(gw.complete(ask("x")), Error);
  EXPECT_EQ(mock->calls(), 1u);
}

TEST(GatewayMockTest, EmptyContentIsNotACleanStop) {
  auto mock = script_mock({{"", {ScriptedReply::text("  ")}}}, 1);
  auto r = Gateway(mock_config(), mock).complete(ask("x"));
  EXPECT_EQ(r.finish_reason, FinishReason::length);
}

TEST(GatewayConfigTest, Validation) {
  BackendConfig cfg;
  cfg.max_in_flight = 0;
  EXPECT_THROW(cfg.check(), Error);
  cfg.max_in_flight = 1;
  cfg.retry.max_attempts = 0;
  EXPECT_THROW(cfg.check(), Error);
  GenerationParams p;
  p.temperature = 2.5;
  EXPECT_THROW(p.check(), Error);
  ChatRequest r;
  r.messages = {{Role::system, "s"}};
  EXPECT_THROW(r.check(), Error);
  r.messages = {{Role::user, "u"}, {Role::assistant, "a"}, {Role::assistant, "b"}};
  EXPECT_THROW(r.check(), Error);
}

TEST(GatewayHttpTest, RetriesRateLimitThenSucceeds) {
  std::atomic<int> calls{0};
  StubServer server([&](const httplib::Request&, httplib::Response& res) {
    if (++calls <= 2) {
      res.status = 429;
      res.set_content("{\"error\":\"slow down\"}", "application/json");
      return;
    }
    res.set_content(ok_body("C"), "application/json");
  });
  ::setenv("RF_TEST_KEY", "sk-test", 1);
  Gateway gw(http_config(server), make_http_backend(http_config(server)));
  gw.set_sleeper([](auto) {});
  auto r = gw.complete(ask("which option?"));
  EXPECT_EQ(r.content, "C");
  EXPECT_EQ(r.attempts, 3);
  EXPECT_EQ(r.usage.prompt_tokens, 7);
  EXPECT_EQ(server.hits(), 3);
  EXPECT_EQ(server.last_auth(), "Bearer sk-test");
  auto body = nlohmann::json::parse(server.last_body());
  EXPECT_EQ(body["model"], "stub-model");
  EXPECT_EQ(body["messages"][0]["role"], "user");
}

TEST(GatewayHttpTest, MissingKeyFailsBeforeNetwork) {
  StubServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content(ok_body("x"), "application/json");
  });
  ::unsetenv("RF_MISSING_KEY");
  auto cfg = http_config(server, "RF_MISSING_KEY");
  Gateway gw(cfg, make_http_backend(cfg));
  try {
    gw.complete(ask("hi"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AuthError);
  }
  EXPECT_EQ(server.hits(), 0);
}

TEST(GatewayHttpTest, ClassifiesStatusCodes) {
  std::atomic<int> status{401};
  StubServer server([&](const httplib::Request&, httplib::Response& res) {
    res.status = status;
    res.set_content(status == 200 ? "not json" : "{}", "application/json");
  });
  ::setenv("RF_TEST_KEY", "sk-test", 1);
  auto cfg = http_config(server);
  Gateway gw(cfg, make_http_backend(cfg));
  gw.set_sleeper([](auto) {});
  auto code_of = [&] {
    try {
      gw.complete(ask("x"));
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  EXPECT_EQ(code_of(), ErrorCode::AuthError);
  EXPECT_EQ(server.hits(), 1);  // not retried
  status = 400;
  EXPECT_EQ(code_of(), ErrorCode::ClientError);
  EXPECT_EQ(server.hits(), 2);
  status = 503;
  EXPECT_EQ(code_of(), ErrorCode::ServerError);
  EXPECT_EQ(server.hits(), 5);  // three attempts
  status = 200;
  EXPECT_EQ(code_of(), ErrorCode::MalformedResponse);
}

TEST(GatewayHttpTest, ReadTimeout) {
  StubServer server([](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(400));
    res.set_content(ok_body("late"), "application/json");
  });
  ::setenv("RF_TEST_KEY", "sk-test", 1);
  auto cfg = http_config(server);
  cfg.timeout_ms = 100;
  cfg.retry.max_attempts = 1;
  Gateway gw(cfg, make_http_backend(cfg));
  try {
    gw.complete(ask("x"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Timeout);
  }
}
