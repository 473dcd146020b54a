#include "reflectforge/io.hpp"

#include <fstream>
#include <sstream>

#include "reflectforge/error.hpp"

namespace reflectforge::io {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileNotFound, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::WriteError, "cannot open " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::WriteError, "short write to " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::WriteError, path.string() + ": " + ec.message());
}

std::string to_jsonl(const std::vector<ordered_json>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
    out.push_back('\n');
  }
  return out;
}

void write_jsonl(const fs::path& path, const std::vector<ordered_json>& rows) {
  write_file(path, to_jsonl(rows));
}

std::vector<JsonlRow> parse_jsonl(std::string_view content, std::string_view origin) {
  std::vector<JsonlRow> rows;
  std::size_t line = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    auto raw = content.substr(pos, end - pos);
    pos = end + 1;
    ++line;
    if (raw.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      rows.push_back({line, ordered_json::parse(raw)});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError,
                  std::string(origin) + ":" + std::to_string(line) + ": " + e.what());
    }
  }
  return rows;
}

std::vector<JsonlRow> read_jsonl(const fs::path& path) {
  return parse_jsonl(read_file(path), path.string());
}

void write_json(const fs::path& path, const ordered_json& doc) {
  write_file(path, doc.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n");
}

}  // namespace reflectforge::io
