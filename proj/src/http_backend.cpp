#include <cstdlib>

#include "httplib.h"
#include "json.hpp"
#include "reflectforge/gateway.hpp"

namespace reflectforge::llm {

namespace {

using json = nlohmann::json;

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // prefix + /chat/completions
};

Endpoint split_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::ConfigError, "base_url needs a scheme: " + base_url);
  }
  const auto path_start = base_url.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = base_url.substr(0, path_start);
  std::string prefix = path_start == std::string::npos ? "" : base_url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  e.path = prefix + "/chat/completions";
  return e;
}

json request_body(const ChatRequest& request, const std::string& model) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  json body = {
      {"model", model},
      {"messages", std::move(messages)},
      {"temperature", request.params.temperature},
      {"max_tokens", request.params.max_tokens},
      {"stream", false},
  };
  if (request.params.seed) body["seed"] = *request.params.seed;
  if (!request.params.stop.empty()) body["stop"] = request.params.stop;
  return body;
}

ChatResponse parse_body(const std::string& raw) {
  ChatResponse out;
  try {
    const json doc = json::parse(raw);
    const auto& choice = doc.at("choices").at(0);
    const auto& content = choice.at("message").at("content");
    out.content = content.is_null() ? "" : content.get<std::string>();
    const std::string finish = choice.value("finish_reason", std::string("stop"));
    out.finish_reason = finish == "length" ? FinishReason::length : FinishReason::stop;
    if (doc.contains("usage") && doc["usage"].is_object()) {
      out.usage.prompt_tokens = doc["usage"].value("prompt_tokens", 0);
      out.usage.completion_tokens = doc["usage"].value("completion_tokens", 0);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedResponse, e.what());
  }
  if (out.content.find_first_not_of(" \t\r\n") == std::string::npos) {
    out.finish_reason = FinishReason::length;
  }
  return out;
}

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendConfig config)
      : config_(std::move(config)), endpoint_(split_url(config_.base_url)) {}

  ChatResponse send(const ChatRequest& request) override {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      throw Error(ErrorCode::AuthError,
                  "environment variable " + config_.api_key_env + " is not set");
    }

    // httplib clients are not safe to share between threads.
    httplib::Client client(endpoint_.origin);
    const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    httplib::Headers headers = {{"Authorization", std::string("Bearer ") + key}};
    const std::string body = request_body(request, config_.model_name).dump();
    auto res = client.Post(endpoint_.path, headers, body, "application/json");
    if (!res) {
      const auto err = res.error();
      const bool timed_out = err == httplib::Error::Read ||
                             err == httplib::Error::Write ||
                             err == httplib::Error::ConnectionTimeout;
      throw Error(timed_out ? ErrorCode::Timeout : ErrorCode::TransportError,
                  httplib::to_string(err));
    }
    const int status = res->status;
    if (status == 401 || status == 403) {
      throw Error(ErrorCode::AuthError, "HTTP " + std::to_string(status));
    }
    if (status == 429) throw Error(ErrorCode::RateLimited, "HTTP 429");
    if (status == 408) throw Error(ErrorCode::Timeout, "HTTP 408");
    if (status >= 500) {
      throw Error(ErrorCode::ServerError, "HTTP " + std::to_string(status));
    }
    if (status < 200 || status >= 300) {
      throw Error(ErrorCode::ClientError,
                  "HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200));
    }
    return parse_body(res->body);
  }

 private:
  BackendConfig config_;
  Endpoint endpoint_;
};

}  // namespace

std::shared_ptr<Backend> make_http_backend(const BackendConfig& config) {
  return std::make_shared<HttpBackend>(config);
}

}  // namespace reflectforge::llm
