#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace reflectforge::text {

std::string trim(std::string_view s);

/// Trims and collapses every run of whitespace (including newlines) to a
/// single space.
std::string collapse_whitespace(std::string_view s);

std::string to_lower(std::string_view s);

bool starts_with_icase(std::string_view s, std::string_view prefix);

/// Case-folded, punctuation stripped, whitespace collapsed. Used to compare
/// short entity phrases and sentences for equality.
std::string normalize_for_match(std::string_view s);

/// Splits on `.`, `?` or `!` followed by whitespace, and on line breaks.
/// Common clinical and Latin abbreviations ("e.g.", "Dr.", "mg.") do not end
/// a sentence. Returned sentences are whitespace-collapsed and non-empty.
std::vector<std::string> split_sentences(std::string_view s);

/// True when some contiguous run of `min_length` bytes of `source` occurs
/// verbatim in `text`. Both inputs are whitespace-collapsed first.
bool shares_substring(std::string_view source, std::string_view text,
                      std::size_t min_length);

/// Replaces the first occurrence of `needle`; returns false if absent.
bool replace_first(std::string& s, std::string_view needle,
                   std::string_view replacement);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Strips wrapping quotes, a trailing period and whitespace from a short
/// model answer such as "\"amoxicillin.\"".
std::string clean_phrase(std::string_view s);

}  // namespace reflectforge::text
