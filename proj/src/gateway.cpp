#include "reflectforge/gateway.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

namespace reflectforge::llm {

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

std::string_view to_string(FinishReason reason) noexcept {
  switch (reason) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
  }
  return "error";
}

void GenerationParams::check() const {
  if (!(temperature >= 0.0 && temperature <= 2.0)) {
    throw Error(ErrorCode::InvalidArgument, "temperature must lie in [0, 2]");
  }
  if (max_tokens < 1) {
    throw Error(ErrorCode::InvalidArgument, "max_tokens must be at least 1");
  }
}

ChatRequest ChatRequest::user(std::string content, GenerationParams params,
                              std::string tag) {
  ChatRequest r;
  r.messages.push_back({Role::user, std::move(content)});
  r.params = std::move(params);
  r.tag = std::move(tag);
  return r;
}

void ChatRequest::check() const {
  params.check();
  bool has_user = false;
  for (std::size_t i = 0; i < messages.size(); ++i) {
    if (messages[i].role == Role::user) has_user = true;
    if (i > 0 && messages[i].role == Role::assistant &&
        messages[i - 1].role == Role::assistant) {
      throw Error(ErrorCode::InvalidArgument,
                  "two consecutive assistant messages in request " + tag);
    }
  }
  if (!has_user) {
    throw Error(ErrorCode::InvalidArgument, "request " + tag + " has no user message");
  }
}

std::string ChatRequest::prompt_text() const {
  std::string out;
  for (std::size_t i = 0; i < messages.size(); ++i) {
    if (i) out.push_back('\n');
    out += messages[i].content;
  }
  return out;
}

void BackendConfig::check() const {
  if (max_in_flight < 1) {
    throw Error(ErrorCode::ConfigError, "max_in_flight must be at least 1");
  }
  if (retry.max_attempts < 1) {
    throw Error(ErrorCode::ConfigError, "retry.max_attempts must be at least 1");
  }
  if (retry.base_backoff_ms < 0) {
    throw Error(ErrorCode::ConfigError, "retry.base_backoff_ms must be non-negative");
  }
  if (timeout_ms < 1) {
    throw Error(ErrorCode::ConfigError, "timeout_ms must be positive");
  }
  if (kind == BackendKind::http && base_url.empty()) {
    throw Error(ErrorCode::ConfigError, "base_url is required for http backends");
  }
  if (api_key_env.empty()) {
    throw Error(ErrorCode::ConfigError, "api_key_env must name an environment variable");
  }
}

void ConcurrencyLimiter::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return in_flight_ < slots_; });
  ++in_flight_;
  peak_ = std::max(peak_, in_flight_);
}

void ConcurrencyLimiter::release() {
  {
    std::lock_guard lock(mu_);
    --in_flight_;
  }
  cv_.notify_one();
}

int ConcurrencyLimiter::peak() const {
  std::lock_guard lock(mu_);
  return peak_;
}

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt) {
  const int shift = std::clamp(attempt - 1, 0, 20);
  return std::chrono::milliseconds(static_cast<std::int64_t>(policy.base_backoff_ms) << shift);
}

Gateway::Gateway(BackendConfig config, std::shared_ptr<Backend> backend) {
  config.check();
  if (!backend) throw Error(ErrorCode::ConfigError, "gateway needs a backend");
  state_ = std::make_shared<State>(std::move(config), std::move(backend));
  state_->sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

void Gateway::set_sleeper(Sleeper sleeper) { state_->sleeper = std::move(sleeper); }

ChatResponse Gateway::complete(const ChatRequest& request) const {
  request.check();
  const auto& policy = state_->config.retry;
  for (int attempt = 1;; ++attempt) {
    try {
      ChatResponse response;
      {
        ConcurrencyLimiter::Slot slot(state_->limiter);
        const auto start = std::chrono::steady_clock::now();
        response = state_->backend->send(request);
        response.latency_ms = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - start)
                                  .count();
      }
      response.tag = request.tag;
      response.attempts = attempt;
      return response;
    } catch (const Error& e) {
      if (!is_retryable(e.code()) || attempt >= policy.max_attempts) {
        throw Error(e.code(), std::string(e.what()) + " [tag " + request.tag +
                                  ", attempts " + std::to_string(attempt) + "]");
      }
      state_->sleeper(backoff_delay(policy, attempt));
    }
  }
}

std::vector<ChatResponse> Gateway::complete_many(
    std::span<const ChatRequest> requests) const {
  std::vector<ChatResponse> out(requests.size());
  if (requests.empty()) return out;

  auto run_one = [&](std::size_t i) {
    try {
      out[i] = complete(requests[i]);
    } catch (const Error& e) {
      ChatResponse failed;
      failed.tag = requests[i].tag;
      failed.finish_reason = FinishReason::error;
      failed.error = e.code();
      failed.error_message = e.what();
      out[i] = std::move(failed);
    }
  };

  const std::size_t workers = std::min<std::size_t>(
      requests.size(), static_cast<std::size_t>(state_->config.max_in_flight));
  if (workers == 1) {
    for (std::size_t i = 0; i < requests.size(); ++i) run_one(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < requests.size(); i = next++) run_one(i);
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

MockBackend::MockBackend(std::vector<ScriptRule> script, MockOptions options)
    : script_(std::move(script)), cursors_(script_.size(), 0), options_(std::move(options)) {}

std::uint64_t MockBackend::request_seed(std::uint64_t seed, const ChatRequest& request) {
  std::uint64_t h = fnv1a(request.tag);
  h = fnv1a("\x1f", h);
  h = fnv1a(request.prompt_text(), h);
  return mix_seed(seed, h);
}

std::optional<ScriptedReply> MockBackend::next_scripted(const std::string& prompt) {
  for (std::size_t r = 0; r < script_.size(); ++r) {
    const auto& rule = script_[r];
    if (!rule.match.empty() && prompt.find(rule.match) == std::string::npos) continue;
    std::size_t& cursor = cursors_[r];
    if (cursor >= rule.replies.size()) {
      if (rule.cycle && !rule.replies.empty()) {
        cursor = 0;
      } else if (options_.strict) {
        throw Error(ErrorCode::ScriptExhausted,
                    "script for \"" + rule.match + "\" consumed after " +
                        std::to_string(rule.replies.size()) + " calls");
      } else {
        continue;
      }
    }
    return rule.replies[cursor++];
  }
  return std::nullopt;
}

ChatResponse MockBackend::send(const ChatRequest& request) {
  const std::string prompt = request.prompt_text();
  std::optional<ScriptedReply> scripted;
  {
    std::lock_guard lock(mu_);
    ++in_flight_;
    peak_ = std::max(peak_, in_flight_);
    try {
      scripted = next_scripted(prompt);
    } catch (...) {
      --in_flight_;
      ++calls_;
      log_.push_back({request.tag, prompt, {}, ErrorCode::ScriptExhausted});
      throw;
    }
  }
  struct Leave {
    MockBackend& self;
    ~Leave() {
      std::lock_guard lock(self.mu_);
      --self.in_flight_;
    }
  } leave{*this};

  const int delay = options_.latency_ms + (scripted ? scripted->delay_ms : 0);
  if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));

  ChatResponse response;
  response.tag = request.tag;
  if (scripted && scripted->failure) {
    std::lock_guard lock(mu_);
    ++calls_;
    log_.push_back({request.tag, prompt, {}, scripted->failure});
    throw Error(*scripted->failure, "scripted failure");
  }
  if (scripted) {
    response.content = scripted->content;
  } else {
    Rng rng(request_seed(options_.seed, request));
    response.content = options_.fallback ? options_.fallback(request, rng) : seeded_filler(rng);
  }
  // Whitespace-only output is a truncated generation, never a clean stop.
  response.finish_reason =
      response.content.find_first_not_of(" \t\r\n") == std::string::npos
          ? FinishReason::length
          : FinishReason::stop;
  response.usage.prompt_tokens = static_cast<int>(prompt.size() / 4);
  response.usage.completion_tokens = static_cast<int>(response.content.size() / 4);
  {
    std::lock_guard lock(mu_);
    ++calls_;
    if (options_.keep_log) log_.push_back({request.tag, prompt, response.content, std::nullopt});
  }
  return response;
}

std::size_t MockBackend::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

int MockBackend::peak_concurrency() const {
  std::lock_guard lock(mu_);
  return peak_;
}

std::vector<MockCall> MockBackend::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::shared_ptr<MockBackend> script_mock(std::vector<ScriptRule> script,
                                         std::uint64_t seed, bool strict) {
  MockOptions options;
  options.seed = seed;
  options.strict = strict;
  return std::make_shared<MockBackend>(std::move(script), std::move(options));
}

std::string seeded_filler(Rng& rng) {
  static constexpr std::string_view kWords[] = {
      "clinical", "history", "suggests", "further", "evaluation", "is",
      "needed",   "before",  "therapy",  "the",     "findings",   "support",
      "a",        "likely",  "diagnosis", "of",     "infection",  "review"};
  constexpr std::size_t n_words = std::size(kWords);
  std::string out;
  const std::size_t n = 6 + rng.index(10);
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out.push_back(' ');
    out += kWords[rng.index(n_words)];
  }
  out.push_back('.');
  out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

}  // namespace reflectforge::llm
