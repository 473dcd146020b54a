#pragma once

#include <optional>
#include <string>

#include "reflectforge/gateway.hpp"
#include "reflectforge/io.hpp"

namespace reflectforge {

/// One prompt/reply pair kept for audit trails.
struct Exchange {
  std::string tag;
  std::string prompt;
  std::string reply;
  std::optional<ErrorCode> error;

  friend bool operator==(const Exchange&, const Exchange&) = default;
};

Exchange make_exchange(const llm::ChatRequest& request, const llm::ChatResponse& response);

io::ordered_json to_json(const Exchange& e);
Exchange exchange_from_json(const io::ordered_json& j);

/// Looks an ErrorCode up by its name; nullopt for unknown names.
std::optional<ErrorCode> parse_error_code(std::string_view name);

}  // namespace reflectforge
