#pragma once

// Chat-completion gateway: OpenAI-compatible HTTP backend, bounded-concurrency
// batching with retries, and a seeded mock backend for offline runs.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "reflectforge/error.hpp"
#include "reflectforge/rng.hpp"

namespace reflectforge::llm {

enum class Role { system, user, assistant };

std::string_view to_string(Role role) noexcept;

struct Message {
  Role role = Role::user;
  std::string content;
};

struct GenerationParams {
  double temperature = 0.7;
  int max_tokens = 1024;
  std::optional<std::int64_t> seed;
  std::vector<std::string> stop;

  void check() const;
};

/// Sampling defaults per call family. Repeated sampling needs diversity,
/// judge and correction calls need stable verdicts.
namespace defaults {
inline constexpr double kSamplingTemperature = 0.8;
inline constexpr double kJudgeTemperature = 0.2;
inline constexpr double kFilterTemperature = 0.7;
}  // namespace defaults

struct ChatRequest {
  std::vector<Message> messages;
  GenerationParams params;
  /// Correlation id echoed into the response. Also feeds the mock's
  /// per-request seed, so it should be unique per logical call.
  std::string tag;

  static ChatRequest user(std::string content, GenerationParams params,
                          std::string tag);

  /// At least one user message and no two consecutive assistant messages.
  void check() const;

  /// All message contents joined by newlines.
  std::string prompt_text() const;
};

enum class FinishReason { stop, length, error };

std::string_view to_string(FinishReason reason) noexcept;

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ChatResponse {
  std::string tag;
  std::string content;
  FinishReason finish_reason = FinishReason::stop;
  Usage usage;
  double latency_ms = 0.0;
  int attempts = 1;
  /// Set when finish_reason == error.
  std::optional<ErrorCode> error;
  std::string error_message;

  bool ok() const { return finish_reason != FinishReason::error; }
};

struct RetryPolicy {
  int max_attempts = 3;
  int base_backoff_ms = 500;
};

enum class BackendKind { http, mock };

inline constexpr std::string_view kDefaultApiKeyEnv = "REFLECTFORGE_API_KEY";

struct BackendConfig {
  BackendKind kind = BackendKind::mock;
  std::string base_url = "http://localhost:8000/v1";
  std::string model_name = "default";
  std::string api_key_env = std::string(kDefaultApiKeyEnv);
  int max_in_flight = 8;
  RetryPolicy retry;
  int timeout_ms = 60000;

  void check() const;
};

/// One attempt against a model endpoint. Failures are thrown as Error with a
/// gateway ErrorCode; the Gateway owns retries.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual ChatResponse send(const ChatRequest& request) = 0;
};

/// Counting limiter that also records the peak number of holders.
class ConcurrencyLimiter {
 public:
  explicit ConcurrencyLimiter(int slots) : slots_(slots) {}

  void acquire();
  void release();
  int peak() const;

  class Slot {
   public:
    explicit Slot(ConcurrencyLimiter& l) : limiter_(l) { limiter_.acquire(); }
    ~Slot() { limiter_.release(); }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

   private:
    ConcurrencyLimiter& limiter_;
  };

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  int slots_;
  int in_flight_ = 0;
  int peak_ = 0;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Thread-safe and cheap to copy; copies share the backend and the in-flight
/// budget.
class Gateway {
 public:
  Gateway(BackendConfig config, std::shared_ptr<Backend> backend);

  /// One completion with retries on transient failures. Throws Error on
  /// final failure.
  ChatResponse complete(const ChatRequest& request) const;

  /// Completions in input order. At most max_in_flight requests are
  /// outstanding; per-item failures come back as finish_reason == error.
  std::vector<ChatResponse> complete_many(std::span<const ChatRequest> requests) const;

  const BackendConfig& config() const { return state_->config; }
  int peak_in_flight() const { return state_->limiter.peak(); }

  /// Replaces the backoff sleep (tests use a recording no-op).
  void set_sleeper(Sleeper sleeper);

 private:
  struct State {
    State(BackendConfig c, std::shared_ptr<Backend> b)
        : config(std::move(c)), backend(std::move(b)), limiter(config.max_in_flight) {}
    BackendConfig config;
    std::shared_ptr<Backend> backend;
    ConcurrencyLimiter limiter;
    Sleeper sleeper;
  };
  std::shared_ptr<State> state_;
};

/// Backoff before attempt `attempt + 1` (attempt is 1-based): base * 2^(attempt-1).
std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt);

/// OpenAI-compatible `POST {base_url}/chat/completions` with bearer auth. The
/// key is read from the configured environment variable on every call.
std::shared_ptr<Backend> make_http_backend(const BackendConfig& config);

// ---------------------------------------------------------------------------
// Mock backend

struct ScriptedReply {
  std::string content;
  std::optional<ErrorCode> failure;
  int delay_ms = 0;

  static ScriptedReply text(std::string s) { return {std::move(s), std::nullopt, 0}; }
  static ScriptedReply fail(ErrorCode code) { return {{}, code, 0}; }
};

/// Replies for prompts containing `match` (empty matches everything), served
/// by call ordinal.
struct ScriptRule {
  std::string match;
  std::vector<ScriptedReply> replies;
  /// Restart from the first reply once the list is consumed.
  bool cycle = false;
};

/// Generates a reply for prompts no rule covers. The Rng is seeded from the
/// mock seed, the request tag and the prompt text only.
using Responder = std::function<std::string(const ChatRequest&, Rng&)>;

struct MockOptions {
  std::uint64_t seed = 0;
  /// A consumed rule raises ScriptExhausted instead of falling through.
  bool strict = false;
  Responder fallback;
  /// Artificial latency per call, useful for concurrency tests.
  int latency_ms = 0;
  /// Keep prompts and replies for log(). Large statistical runs turn it off;
  /// calls() still counts.
  bool keep_log = true;
};

struct MockCall {
  std::string tag;
  std::string prompt;
  std::string reply;
  std::optional<ErrorCode> failure;
};

class MockBackend final : public Backend {
 public:
  MockBackend(std::vector<ScriptRule> script, MockOptions options);

  ChatResponse send(const ChatRequest& request) override;

  std::size_t calls() const;
  int peak_concurrency() const;
  /// Calls in completion order.
  std::vector<MockCall> log() const;

  /// Seed derivation shared with callers that want to reproduce a draw.
  static std::uint64_t request_seed(std::uint64_t seed, const ChatRequest& request);

 private:
  std::optional<ScriptedReply> next_scripted(const std::string& prompt);

  std::vector<ScriptRule> script_;
  std::vector<std::size_t> cursors_;
  MockOptions options_;
  mutable std::mutex mu_;
  std::vector<MockCall> log_;
  std::size_t calls_ = 0;
  int in_flight_ = 0;
  int peak_ = 0;
};

std::shared_ptr<MockBackend> script_mock(std::vector<ScriptRule> script,
                                         std::uint64_t seed, bool strict = false);

/// Deterministic filler text used when a mock has no responder.
std::string seeded_filler(Rng& rng);

}  // namespace reflectforge::llm
