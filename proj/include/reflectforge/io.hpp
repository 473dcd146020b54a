#pragma once

// JSONL artifact helpers shared by every pipeline stage.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace reflectforge::io {

using ordered_json = nlohmann::ordered_json;

/// Whole file as bytes. Throws FileNotFound.
std::string read_file(const std::filesystem::path& path);

/// Writes through a sibling temp file and renames, so readers never see a
/// half-written artifact. Throws WriteError.
void write_file(const std::filesystem::path& path, std::string_view content);

/// One compact JSON document per line, each terminated by '\n'.
std::string to_jsonl(const std::vector<ordered_json>& rows);
void write_jsonl(const std::filesystem::path& path, const std::vector<ordered_json>& rows);

struct JsonlRow {
  std::size_t line = 0;  // 1-based
  ordered_json value;
};

/// Blank lines are skipped. A bad line throws ParseError naming its number.
std::vector<JsonlRow> read_jsonl(const std::filesystem::path& path);
std::vector<JsonlRow> parse_jsonl(std::string_view content, std::string_view origin);

/// Pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const ordered_json& doc);

}  // namespace reflectforge::io
