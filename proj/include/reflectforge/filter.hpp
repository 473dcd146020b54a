#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "reflectforge/corpus.hpp"
#include "reflectforge/gateway.hpp"
#include "reflectforge/io.hpp"
#include "reflectforge/prompts.hpp"
#include "reflectforge/reflection.hpp"

namespace reflectforge {

struct FilterParams {
  int trials = 10;
  int retain_threshold = 6;
  double temperature = llm::defaults::kFilterTemperature;
  int max_tokens = 1024;
  double judge_temperature = llm::defaults::kJudgeTemperature;
};

enum class TrialOutcome { success, wrong, unparsed, gateway_error, judge_unavailable };

std::string_view to_string(TrialOutcome o) noexcept;

struct Trial {
  int ordinal = 0;
  TrialOutcome outcome = TrialOutcome::wrong;
  /// RG1: extracted option letter. RG2: the phrase found where the entity was
  /// masked, or empty when the sentence could not be anchored.
  std::string decision;
  bool judged = false;
  /// Request tag, the key into the stored transcript.
  std::string tag;
  std::string reply;

  bool ok() const { return outcome == TrialOutcome::success; }
  friend bool operator==(const Trial&, const Trial&) = default;
};

struct FilterVerdict {
  std::string instance_id;
  std::string record_id;
  Pathway pathway = Pathway::rg1;
  Source source = Source::consultation;
  int trials = 0;
  int successes = 0;
  bool retained = false;
  std::vector<Trial> per_trial;

  friend bool operator==(const FilterVerdict&, const FilterVerdict&) = default;
};

io::ordered_json to_json(const FilterVerdict& v);
FilterVerdict verdict_from_json(const io::ordered_json& j);

/// Throws InvalidArgument unless trials >= 1 and 1 <= threshold <= trials.
void check(const FilterParams& params);

/// Phrase occupying the masked entity's slot in `revised`: the words between
/// the unchanged context before and after the entity in `original`. nullopt
/// when that context was not kept.
std::optional<std::string> entity_at_mask(std::string_view original, std::string_view surface,
                                          std::string_view revised);

/// Replays the reflection `trials` times. Gateway errors are failed trials.
FilterVerdict assess_instance(const ReflectionDraft& draft, const QARecord& record,
                              const FilterParams& params, const llm::Gateway& gateway,
                              const PromptCatalog& prompts);

struct FilterCounts {
  std::size_t assessed = 0;
  std::size_t retained = 0;
  double rate() const { return assessed == 0 ? 0.0 : double(retained) / double(assessed); }
};

struct FilterSummary {
  FilterCounts total;
  std::map<std::string, FilterCounts> by_pathway;
  std::map<std::string, FilterCounts> by_source;
  std::size_t gateway_failures = 0;
  std::size_t judge_unavailable = 0;
};

io::ordered_json to_json(const FilterSummary& s);

FilterSummary summarize(const std::vector<FilterVerdict>& verdicts);

struct FilterResult {
  std::vector<ReflectionDraft> retained;
  std::vector<FilterVerdict> verdicts;
  FilterSummary summary;
};

/// Verdict per draft in input order. All trials of all drafts go through the
/// gateway as one batch, followed by one batch of equivalence judgements.
FilterResult filter_dataset(const std::vector<ReflectionDraft>& drafts,
                            const std::vector<QARecord>& records, const FilterParams& params,
                            const llm::Gateway& gateway, const PromptCatalog& prompts);

}  // namespace reflectforge
