#include "reflectforge/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>

#include "reflectforge/error.hpp"
#include "reflectforge/gateway.hpp"
#include "reflectforge/prompts.hpp"
#include "reflectforge/text.hpp"

namespace reflectforge {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view to_string(Source s) noexcept {
  return s == Source::consultation ? "consultation" : "multichoice";
}

std::optional<Source> parse_source(std::string_view s) {
  if (s == "consultation") return Source::consultation;
  if (s == "multichoice") return Source::multichoice;
  return std::nullopt;
}

std::vector<std::string> QARecord::option_letters() const {
  std::vector<std::string> out;
  out.reserve(options.size());
  for (const auto& [letter, _] : options) out.push_back(letter);
  return out;
}

std::string format_options(const QARecord& r) {
  std::string out;
  for (const auto& [letter, text] : r.options) {
    if (!out.empty()) out.push_back('\n');
    out += "(" + letter + ") " + text;
  }
  return out;
}

io::ordered_json to_json(const QARecord& r) {
  io::ordered_json j;
  j["id"] = r.id;
  j["source"] = to_string(r.source);
  j["question"] = r.question;
  if (!r.options.empty()) j["options"] = r.options;
  j["gold"] = r.gold;
  j["reasoning"] = r.reasoning;
  return j;
}

QARecord record_from_json(const io::ordered_json& j) {
  QARecord r;
  try {
    r.id = j.at("id").get<std::string>();
    auto src = parse_source(j.at("source").get<std::string>());
    if (!src) throw Error(ErrorCode::SchemaMismatch, "unknown source in record " + r.id);
    r.source = *src;
    r.question = j.at("question").get<std::string>();
    if (j.contains("options")) {
      r.options = j.at("options").get<std::map<std::string, std::string>>();
    }
    r.gold = j.at("gold").get<std::string>();
    r.reasoning = j.value("reasoning", std::string());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, e.what());
  }
  return r;
}

namespace {

struct RawRow {
  std::size_t line;
  json value;
};

// JSONL, or a JSON array whose elements are numbered from 1.
std::vector<RawRow> read_rows(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::FileNotFound, path.string());
  const std::string content = io::read_file(path);
  const auto first = content.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) {
    throw Error(ErrorCode::EmptyCorpus, path.string() + " has no records");
  }
  std::vector<RawRow> rows;
  if (content[first] == '[') {
    json doc;
    try {
      doc = json::parse(content);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaMismatch, path.string() + ": " + e.what());
    }
    for (std::size_t i = 0; i < doc.size(); ++i) rows.push_back({i + 1, std::move(doc[i])});
  } else {
    std::size_t line = 0;
    std::size_t pos = 0;
    while (pos < content.size()) {
      auto end = content.find('\n', pos);
      if (end == std::string::npos) end = content.size();
      std::string_view raw(content.data() + pos, end - pos);
      pos = end + 1;
      ++line;
      if (raw.find_first_not_of(" \t\r") == std::string_view::npos) continue;
      try {
        rows.push_back({line, json::parse(raw)});
      } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaMismatch,
                    path.string() + ":" + std::to_string(line) + ": " + e.what());
      }
    }
  }
  if (rows.empty()) throw Error(ErrorCode::EmptyCorpus, path.string() + " has no records");
  return rows;
}

std::string make_id(const fs::path& path, std::size_t line) {
  std::string n = std::to_string(line);
  if (n.size() < 6) n.insert(0, 6 - n.size(), '0');
  return path.stem().string() + ":" + n;
}

[[noreturn]] void mismatch(const fs::path& path, std::size_t line, const std::string& what) {
  throw Error(ErrorCode::SchemaMismatch,
              path.string() + ":" + std::to_string(line) + ": " + what);
}

std::string string_field(const json& row, const std::string& key) {
  auto it = row.find(key);
  if (it == row.end() || it->is_null()) return {};
  if (it->is_string()) return text::trim(it->get<std::string>());
  if (it->is_number()) return it->dump();
  return {};
}

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

std::string letter_for(std::size_t i) { return std::string(1, static_cast<char>('A' + i)); }

}  // namespace

std::vector<QARecord> load_consultations(const fs::path& path,
                                         const ConsultationSchema& schema) {
  std::vector<QARecord> out;
  for (auto& [line, row] : read_rows(path)) {
    if (!row.is_object()) mismatch(path, line, "expected a JSON object");
    QARecord r;
    r.id = make_id(path, line);
    r.source = Source::consultation;
    r.question = string_field(row, schema.question_field);
    if (r.question.empty()) r.question = string_field(row, schema.fallback_question_field);
    if (r.question.empty()) {
      mismatch(path, line, "no patient message in \"" + schema.question_field + "\" or \"" +
                               schema.fallback_question_field + "\"");
    }
    r.reasoning = string_field(row, schema.response_field);
    if (r.reasoning.empty()) {
      mismatch(path, line, "no doctor response in \"" + schema.response_field + "\"");
    }
    r.gold = r.reasoning;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<QARecord> load_multichoice(const fs::path& path, const MultichoiceSchema& schema) {
  std::vector<QARecord> out;
  for (auto& [line, row] : read_rows(path)) {
    if (!row.is_object()) mismatch(path, line, "expected a JSON object");
    QARecord r;
    r.id = make_id(path, line);
    r.source = Source::multichoice;
    r.question = string_field(row, "question");
    if (r.question.empty()) mismatch(path, line, "missing \"question\"");

    std::string gold;
    if (row.contains("opa")) {
      static constexpr std::array<const char*, 5> keys = {"opa", "opb", "opc", "opd", "ope"};
      for (std::size_t i = 0; i < keys.size(); ++i) {
        auto t = string_field(row, keys[i]);
        if (!t.empty()) r.options[letter_for(i)] = t;
      }
      auto cop = row.find("cop");
      if (cop == row.end() || !cop->is_number_integer()) {
        mismatch(path, line, "missing integer \"cop\"");
      }
      const long idx = cop->get<long>() - schema.cop_base;
      gold = idx >= 0 && idx < 26 ? letter_for(static_cast<std::size_t>(idx)) : "?";
      r.reasoning = string_field(row, "exp");
    } else if (row.contains("options")) {
      const auto& opts = row["options"];
      if (opts.is_object()) {
        for (const auto& [k, v] : opts.items()) {
          if (!v.is_string()) mismatch(path, line, "option " + k + " is not text");
          r.options[upper(k)] = text::trim(v.get<std::string>());
        }
      } else if (opts.is_array()) {
        for (std::size_t i = 0; i < opts.size(); ++i) {
          if (!opts[i].is_string()) mismatch(path, line, "option is not text");
          r.options[letter_for(i)] = text::trim(opts[i].get<std::string>());
        }
      } else {
        mismatch(path, line, "\"options\" must be an object or array");
      }
      gold = string_field(row, "answer_idx");
      if (gold.empty()) gold = string_field(row, "answer");
      // An answer given as option text maps back to its letter.
      if (!r.options.contains(upper(gold))) {
        for (const auto& [letter, t] : r.options) {
          if (text::normalize_for_match(t) == text::normalize_for_match(gold)) {
            gold = letter;
            break;
          }
        }
      }
      r.reasoning = string_field(row, "explanation");
    } else if (row.contains("final_decision")) {
      r.options = {{"A", "yes"}, {"B", "no"}, {"C", "maybe"}};
      const auto d = text::to_lower(string_field(row, "final_decision"));
      gold = d == "yes" ? "A" : d == "no" ? "B" : d == "maybe" ? "C" : d;
      r.reasoning = string_field(row, "long_answer");
    } else {
      mismatch(path, line, "no recognised option fields");
    }

    for (const auto& [letter, t] : r.options) {
      if (letter.size() != 1 || letter[0] < 'A' || letter[0] > 'Z') {
        mismatch(path, line, "option key \"" + letter + "\" is not a letter");
      }
      if (t.empty()) mismatch(path, line, "option " + letter + " is empty");
    }
    if (r.options.size() < 2) mismatch(path, line, "fewer than two options");
    gold = upper(gold);
    if (!r.options.contains(gold)) {
      throw Error(ErrorCode::InvalidGold, path.string() + ":" + std::to_string(line) +
                                              ": gold \"" + gold + "\" is not an option");
    }
    r.gold = gold;
    out.push_back(std::move(r));
  }
  return out;
}

std::string_view to_string(RelevanceCheck c) noexcept {
  switch (c) {
    case RelevanceCheck::none: return "none";
    case RelevanceCheck::heuristic: return "heuristic";
    case RelevanceCheck::llm: return "llm";
  }
  return "none";
}

std::optional<RelevanceCheck> parse_relevance_check(std::string_view s) {
  if (s == "none") return RelevanceCheck::none;
  if (s == "heuristic") return RelevanceCheck::heuristic;
  if (s == "llm") return RelevanceCheck::llm;
  return std::nullopt;
}

io::ordered_json to_json(const PreprocessReport& r) {
  return {{"input_count", r.input_count},
          {"kept_count", r.kept_count},
          {"discarded_short", r.discarded_short},
          {"discarded_irrelevant", r.discarded_irrelevant},
          {"relevance_fallbacks", r.relevance_fallbacks}};
}

namespace {

// Word prefixes; a word matches when it starts with one of them.
constexpr std::array<std::string_view, 103> kMedicalStems = {
    "abdom",    "acute",     "allerg",   "anaemi",   "anemi",    "antibiot", "anxiet",
    "arter",    "arthr",     "asthma",   "bacteri",  "biops",    "bleed",    "blood",
    "bone",     "brain",     "cancer",   "cardi",    "chest",    "cholester", "chronic",
    "clinic",   "cough",     "diabet",   "diagnos",  "diarrh",   "diet",     "diseas",
    "doctor",   "dos",       "drug",     "ecg",      "fever",    "fractur",  "gland",
    "headach",  "heart",     "hepat",    "hormon",   "hospital", "hypert",   "immun",
    "infect",   "inflamm",   "injur",    "insulin",  "kidney",   "lesion",   "liver",
    "lung",     "lymph",     "medic",    "mg",       "migrain",  "mri",      "muscl",
    "nause",    "nerv",      "neuro",    "ointment", "pain",     "patholog", "patient",
    "physician", "pill",     "pregnan",  "prescri",  "pressur",  "pulmon",   "rash",
    "renal",    "scan",      "seizur",   "sperm",    "steroid",  "stomach",  "surg",
    "swell",    "symptom",   "syndrom",  "tablet",   "therap",   "thyroid",  "tissu",
    "treat",    "tumor",     "tumour",   "ulcer",    "ultrasound", "urin",   "vaccin",
    "vein",     "viral",     "virus",    "vitamin",  "vomit",    "pneumon",  "organism",
    "pathogen", "microb",    "strepto",  "staphylo", "fung"};

std::size_t medical_hits(std::string_view s) {
  std::set<std::string_view> hits;
  const std::string norm = text::normalize_for_match(s);
  std::size_t pos = 0;
  while (pos < norm.size()) {
    auto end = norm.find(' ', pos);
    if (end == std::string::npos) end = norm.size();
    std::string_view word(norm.data() + pos, end - pos);
    pos = end + 1;
    for (auto stem : kMedicalStems) {
      if (word.starts_with(stem)) {
        hits.insert(stem);
        break;
      }
    }
  }
  return hits.size();
}

}  // namespace

bool heuristic_relevant(const QARecord& r) {
  if (text::trim(r.question).empty()) return false;
  if (r.source == Source::consultation) return medical_hits(r.reasoning) >= 2;
  return medical_hits(r.question + " " + format_options(r) + " " + r.reasoning) >= 1;
}

bool is_short(const QARecord& r, const PreprocessPolicy& policy) {
  if (r.source == Source::multichoice && !policy.length_filter_multichoice) return false;
  const auto sentences = text::split_sentences(r.reasoning);
  return sentences.size() < policy.min_sentences ||
         text::collapse_whitespace(r.reasoning).size() < policy.min_chars;
}

std::optional<bool> parse_yes_no(std::string_view reply) {
  const std::string norm = text::normalize_for_match(reply);
  const std::string_view first = std::string_view(norm).substr(0, norm.find(' '));
  if (first == "yes") return true;
  if (first == "no") return false;
  return std::nullopt;
}

PreprocessResult preprocess(std::vector<QARecord> records, const PreprocessPolicy& policy,
                            const llm::Gateway* gateway, const PromptCatalog* prompts) {
  if (policy.relevance == RelevanceCheck::llm && (gateway == nullptr || prompts == nullptr)) {
    throw Error(ErrorCode::ConfigError, "llm relevance check needs a gateway and prompts");
  }
  PreprocessResult result;
  result.report.input_count = records.size();

  std::vector<QARecord> long_enough;
  for (auto& r : records) {
    if (is_short(r, policy)) {
      ++result.report.discarded_short;
    } else {
      long_enough.push_back(std::move(r));
    }
  }

  std::vector<bool> relevant(long_enough.size(), true);
  if (policy.relevance == RelevanceCheck::heuristic) {
    for (std::size_t i = 0; i < long_enough.size(); ++i) {
      relevant[i] = heuristic_relevant(long_enough[i]);
    }
  } else if (policy.relevance == RelevanceCheck::llm) {
    std::vector<llm::ChatRequest> requests;
    llm::GenerationParams params;
    params.temperature = llm::defaults::kJudgeTemperature;
    params.max_tokens = 8;
    for (const auto& r : long_enough) {
      const std::string response =
          r.source == Source::consultation ? r.reasoning : format_options(r) + "\n" + r.reasoning;
      requests.push_back(llm::ChatRequest::user(
          prompts->render(PromptId::relevance, {{"question", r.question}, {"response", response}}),
          params, make_tag(task::relevance, r.id, 0)));
    }
    const auto replies = gateway->complete_many(requests);
    for (std::size_t i = 0; i < long_enough.size(); ++i) {
      std::optional<bool> verdict;
      if (replies[i].ok()) verdict = parse_yes_no(replies[i].content);
      if (!verdict) {
        ++result.report.relevance_fallbacks;
        verdict = heuristic_relevant(long_enough[i]);
      }
      relevant[i] = *verdict;
    }
  }

  for (std::size_t i = 0; i < long_enough.size(); ++i) {
    if (relevant[i]) {
      result.kept.push_back(std::move(long_enough[i]));
    } else {
      ++result.report.discarded_irrelevant;
    }
  }
  std::sort(result.kept.begin(), result.kept.end(),
            [](const QARecord& a, const QARecord& b) { return a.id < b.id; });
  result.report.kept_count = result.kept.size();
  return result;
}

}  // namespace reflectforge
