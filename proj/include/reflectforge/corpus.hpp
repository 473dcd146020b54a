#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "reflectforge/io.hpp"

namespace reflectforge {

namespace llm {
class Gateway;
}
class PromptCatalog;

enum class Source { consultation, multichoice };

std::string_view to_string(Source s) noexcept;
std::optional<Source> parse_source(std::string_view s);

struct QARecord {
  /// `<file stem>:<line>`, a pure function of where the record was read.
  std::string id;
  Source source = Source::consultation;
  std::string question;
  /// Uppercase letter to option text; empty for consultations.
  std::map<std::string, std::string> options;
  /// Option letter for multichoice, reference response for consultations.
  std::string gold;
  std::string reasoning;

  std::vector<std::string> option_letters() const;

  friend bool operator==(const QARecord&, const QARecord&) = default;
};

/// "(A) text" lines in letter order.
std::string format_options(const QARecord& r);

io::ordered_json to_json(const QARecord& r);
QARecord record_from_json(const io::ordered_json& j);

/// Field names for consultation corpora. The question is taken from
/// `question_field`, or `fallback_question_field` when the former is empty.
struct ConsultationSchema {
  std::string question_field = "input";
  std::string fallback_question_field = "instruction";
  std::string response_field = "output";
};

/// Multichoice records are recognised in three shapes:
///  - `question`, `opa`..`ope`, integer `cop`, optional `exp`
///  - `question`, `options` (object keyed by letter or array), `answer_idx`
///    or `answer` (letter or option text)
///  - `question`, `final_decision` yes/no/maybe, optional `long_answer`;
///    mapped to options A=yes, B=no, C=maybe
struct MultichoiceSchema {
  /// Base of the integer `cop` field.
  int cop_base = 0;
};

/// JSONL or a JSON array. Throws FileNotFound, SchemaMismatch (with line
/// number) or EmptyCorpus.
std::vector<QARecord> load_consultations(const std::filesystem::path& path,
                                         const ConsultationSchema& schema = {});

/// Also throws InvalidGold when the gold answer is not among the options.
std::vector<QARecord> load_multichoice(const std::filesystem::path& path,
                                       const MultichoiceSchema& schema = {});

enum class RelevanceCheck { none, heuristic, llm };

std::string_view to_string(RelevanceCheck c) noexcept;
std::optional<RelevanceCheck> parse_relevance_check(std::string_view s);

struct PreprocessPolicy {
  std::size_t min_sentences = 3;
  std::size_t min_chars = 200;
  /// Multichoice explanations are often terse and RG1 does not use them, so
  /// the length screen applies to consultations unless this is set.
  bool length_filter_multichoice = false;
  RelevanceCheck relevance = RelevanceCheck::heuristic;
};

struct PreprocessReport {
  std::size_t input_count = 0;
  std::size_t kept_count = 0;
  std::size_t discarded_short = 0;
  std::size_t discarded_irrelevant = 0;
  /// LLM relevance calls that failed and were decided by the heuristic.
  std::size_t relevance_fallbacks = 0;

  friend bool operator==(const PreprocessReport&, const PreprocessReport&) = default;
};

io::ordered_json to_json(const PreprocessReport& r);

struct PreprocessResult {
  /// Sorted by id.
  std::vector<QARecord> kept;
  PreprocessReport report;
};

/// Keyword screen: the response must mention medical vocabulary. For
/// multichoice records the question and options count too.
bool heuristic_relevant(const QARecord& r);

bool is_short(const QARecord& r, const PreprocessPolicy& policy);

/// `gateway` and `prompts` are required only for RelevanceCheck::llm.
PreprocessResult preprocess(std::vector<QARecord> records, const PreprocessPolicy& policy,
                            const llm::Gateway* gateway = nullptr,
                            const PromptCatalog* prompts = nullptr);

/// Parses a yes/no verdict; nullopt for anything else.
std::optional<bool> parse_yes_no(std::string_view reply);

}  // namespace reflectforge
