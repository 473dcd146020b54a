#include "reflectforge/exchange.hpp"

namespace reflectforge {

Exchange make_exchange(const llm::ChatRequest& request, const llm::ChatResponse& response) {
  Exchange e;
  e.tag = request.tag;
  e.prompt = request.prompt_text();
  e.reply = response.content;
  e.error = response.error;
  return e;
}

io::ordered_json to_json(const Exchange& e) {
  io::ordered_json j;
  j["tag"] = e.tag;
  j["prompt"] = e.prompt;
  j["reply"] = e.reply;
  if (e.error) j["error"] = to_string(*e.error);
  return j;
}

Exchange exchange_from_json(const io::ordered_json& j) {
  Exchange e;
  e.tag = j.value("tag", std::string());
  e.prompt = j.value("prompt", std::string());
  e.reply = j.value("reply", std::string());
  if (j.contains("error")) e.error = parse_error_code(j["error"].get<std::string>());
  return e;
}

std::optional<ErrorCode> parse_error_code(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::StageFailure); ++i) {
    const auto code = static_cast<ErrorCode>(i);
    if (to_string(code) == name) return code;
  }
  return std::nullopt;
}

}  // namespace reflectforge
