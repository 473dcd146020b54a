#include "reflectforge/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <unordered_set>

namespace reflectforge::text {

namespace {

bool is_space(char c) {
  return std::isspace(static_cast<unsigned char>(c)) != 0;
}

constexpr std::array<std::string_view, 24> kAbbreviations = {
    "e.g.", "i.e.", "dr.",   "mr.",   "mrs.",   "ms.",  "vs.",  "etc.",
    "approx.", "mg.", "ml.", "no.",  "st.",  "fig.",  "resp.", "wt.",
    "max.", "min.", "hr.",  "hrs.", "b.i.d.", "t.i.d.", "q.i.d.", "p.o."};

// The word ending at `end` (inclusive of the period) is a known abbreviation.
bool ends_with_abbreviation(std::string_view s, std::size_t end) {
  std::size_t start = end;
  while (start > 0 && !is_space(s[start - 1])) --start;
  std::string word = to_lower(s.substr(start, end - start + 1));
  // Strip leading punctuation such as '(' before comparing.
  while (!word.empty() && !std::isalnum(static_cast<unsigned char>(word[0]))) {
    word.erase(word.begin());
  }
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), word) !=
         kAbbreviations.end();
}

}  // namespace

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

bool starts_with_icase(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  return to_lower(s.substr(0, prefix.size())) == to_lower(prefix);
}

std::string normalize_for_match(std::string_view s) {
  std::string folded;
  folded.reserve(s.size());
  for (unsigned char c : s) {
    if (std::isalnum(c)) {
      folded.push_back(static_cast<char>(std::tolower(c)));
    } else if (c >= 0x80) {
      folded.push_back(static_cast<char>(c));
    } else {
      folded.push_back(' ');
    }
  }
  return collapse_whitespace(folded);
}

std::vector<std::string> split_sentences(std::string_view s) {
  std::vector<std::string> out;
  auto flush = [&](std::size_t b, std::size_t e) {
    std::string sentence = collapse_whitespace(s.substr(b, e - b));
    if (!sentence.empty()) out.push_back(std::move(sentence));
  };
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (c == '\n') {
      flush(start, i);
      start = i + 1;
      continue;
    }
    if (c != '.' && c != '?' && c != '!') continue;
    // Absorb runs like "?!" or "..." and a closing quote or bracket.
    std::size_t end = i;
    while (end + 1 < s.size() &&
           (s[end + 1] == '.' || s[end + 1] == '?' || s[end + 1] == '!' ||
            s[end + 1] == '"' || s[end + 1] == ')' || s[end + 1] == '\'')) {
      ++end;
    }
    bool at_boundary = end + 1 == s.size() || is_space(s[end + 1]);
    if (!at_boundary) {
      i = end;
      continue;
    }
    if (c == '.' && end == i && ends_with_abbreviation(s, i)) {
      continue;
    }
    flush(start, end + 1);
    start = end + 1;
    i = end;
  }
  if (start < s.size()) flush(start, s.size());
  return out;
}

bool shares_substring(std::string_view source, std::string_view text,
                      std::size_t min_length) {
  if (min_length == 0) return true;
  const std::string src = collapse_whitespace(source);
  const std::string txt = collapse_whitespace(text);
  if (src.size() < min_length || txt.size() < min_length) return false;
  std::unordered_set<std::string_view> windows;
  windows.reserve(txt.size());
  const std::string_view tv(txt);
  for (std::size_t i = 0; i + min_length <= tv.size(); ++i) {
    windows.insert(tv.substr(i, min_length));
  }
  const std::string_view sv(src);
  for (std::size_t i = 0; i + min_length <= sv.size(); ++i) {
    if (windows.contains(sv.substr(i, min_length))) return true;
  }
  return false;
}

bool replace_first(std::string& s, std::string_view needle,
                   std::string_view replacement) {
  if (needle.empty()) return false;
  auto pos = s.find(needle);
  if (pos == std::string::npos) return false;
  s.replace(pos, needle.size(), replacement);
  return true;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

std::string clean_phrase(std::string_view s) {
  std::string out = collapse_whitespace(s);
  auto strip = [&](char c) {
    return !out.empty() && (out.front() == c || out.back() == c);
  };
  bool changed = true;
  while (changed && !out.empty()) {
    changed = false;
    for (char q : {'"', '\'', '`', '*'}) {
      if (strip(q)) {
        if (out.front() == q) out.erase(out.begin());
        if (!out.empty() && out.back() == q) out.pop_back();
        changed = true;
      }
    }
    if (!out.empty() && (out.back() == '.' || out.back() == ',')) {
      out.pop_back();
      changed = true;
    }
    out = trim(out);
  }
  return out;
}

}  // namespace reflectforge::text
