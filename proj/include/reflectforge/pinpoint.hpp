#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "reflectforge/corpus.hpp"
#include "reflectforge/exchange.hpp"
#include "reflectforge/gateway.hpp"
#include "reflectforge/prompts.hpp"
#include "reflectforge/trajectory.hpp"

namespace reflectforge {

enum class Pathway { rg1, rg2 };

/// "RG1" / "RG2".
std::string_view to_string(Pathway p) noexcept;
std::optional<Pathway> parse_pathway(std::string_view s);

enum class EntityType { disease, etiology, treatment, drug, anatomy, test, other };

std::string_view to_string(EntityType t) noexcept;
/// Case-insensitive; unknown names map to `other`.
EntityType parse_entity_type(std::string_view s);
/// "[DRUG]" for drug.
std::string placeholder_for(EntityType t);

struct MaskedEntity {
  std::string surface;
  EntityType type = EntityType::other;
  std::string wrong_fill;
  double error_rate = 0.0;

  friend bool operator==(const MaskedEntity&, const MaskedEntity&) = default;
};

struct Rg1Detail {
  std::string sampled_answer;
  std::string wrong_option;

  friend bool operator==(const Rg1Detail&, const Rg1Detail&) = default;
};

struct Pinpoint {
  /// `<record id>#<pathway><n>`, unique within a run.
  std::string id;
  std::string record_id;
  Pathway pathway = Pathway::rg1;
  std::size_t step_index = 0;
  std::string erroneous_text;
  /// The step as it read before the error was introduced. For RG1 there is
  /// no clean version and this equals erroneous_text.
  std::string original_text;
  /// T_er: the erroneous trajectory containing erroneous_text at step_index.
  Trajectory trajectory;
  std::optional<Rg1Detail> rg1;
  std::optional<MaskedEntity> rg2;
  std::vector<Exchange> transcript;

  friend bool operator==(const Pinpoint&, const Pinpoint&) = default;
};

io::ordered_json to_json(const Pinpoint& p);
Pinpoint pinpoint_from_json(const io::ordered_json& j);

io::ordered_json to_json(const Trajectory& t);
Trajectory trajectory_from_json(const io::ordered_json& j);

// ---------------------------------------------------------------------------
// Decision extraction

/// Last decision statement in `answer_text` whose letter is one of
/// `option_letters`. Recognised forms, in any mix: "answer is (X)",
/// "final answer: X", "the best choice is X", "option X is correct",
/// "answer: X" and a lone letter closing the text. A lowercase letter counts
/// only inside parentheses. Throws NoDecisionFound.
std::string extract_decision(std::string_view answer_text,
                             const std::vector<std::string>& option_letters);

/// Sentence index of the decision statement in `sentences`, if any.
std::optional<std::size_t> decision_sentence(const std::vector<std::string>& sentences,
                                             const std::vector<std::string>& option_letters);

// ---------------------------------------------------------------------------
// RG1

enum class Rg1Policy { first, all };

std::string_view to_string(Rg1Policy p) noexcept;
std::optional<Rg1Policy> parse_rg1_policy(std::string_view s);

struct Rg1Params {
  int k = 8;
  Rg1Policy policy = Rg1Policy::first;
  double temperature = llm::defaults::kSamplingTemperature;
  int max_tokens = 1024;
};

struct Rg1Result {
  std::vector<Pinpoint> pinpoints;
  std::size_t samples = 0;
  std::size_t correct = 0;
  /// Samples with no recognisable decision (NoDecisionFound).
  std::size_t unparsed = 0;
  /// Wrong samples with no reasoning sentence to pin the error on.
  std::size_t unusable = 0;
  std::vector<Exchange> transcript;
};

/// First wrong-option sentence among `steps`: one naming the letter as an
/// option or quoting the option text. Falls back to the last step.
std::size_t locate_wrong_option_sentence(const std::vector<std::string>& steps,
                                         const QARecord& record, std::string_view letter);

/// Samples k reasoned answers and pins each incorrect one (or only the first
/// under Rg1Policy::first) on the sentence describing the wrong option.
/// Gateway failures are rethrown.
Rg1Result rg1_generate_pinpoint(const QARecord& record, const Rg1Params& params,
                                const llm::Gateway& gateway, const PromptCatalog& prompts);

// ---------------------------------------------------------------------------
// RG2

/// Replaces the first occurrence of `surface` with the type placeholder.
/// Throws EntityNotInSentence.
std::string mask_entity(std::string_view sentence, std::string_view surface, EntityType type);

struct ExtractedEntity {
  std::string surface;
  EntityType type = EntityType::other;
  std::size_t sentence_index = 0;
  std::size_t offset = 0;
};

/// Parses the extraction reply (a JSON array of {"entity","type"}) and
/// anchors each entity to the first step sentence containing it. Entities
/// found nowhere are dropped; duplicates are merged. Throws
/// MalformedGeneration when no JSON array can be read.
std::vector<ExtractedEntity> parse_entities(std::string_view reply,
                                            const std::vector<std::string>& steps);

struct Rg2Params {
  int m = 10;
  double error_threshold = 0.5;
  std::size_t max_pinpoints = 3;
  bool include_question = true;
  double probe_temperature = llm::defaults::kSamplingTemperature;
  double judge_temperature = llm::defaults::kJudgeTemperature;
};

struct ProbeOutcome {
  std::string fill;
  bool correct = false;
  bool judged = false;
  /// Probe or judge call failed; excluded from the error rate.
  bool failed = false;
};

struct EntityReport {
  ExtractedEntity entity;
  std::vector<ProbeOutcome> probes;
  double error_rate = 0.0;
  std::string wrong_fill;
  bool qualifies = false;
};

struct Rg2Result {
  /// Sorted by error rate descending, then sentence position.
  std::vector<Pinpoint> pinpoints;
  std::vector<EntityReport> entities;
  /// NoEntitiesFound or MalformedGeneration when the record yields nothing.
  std::optional<ErrorCode> skipped;
  std::vector<Exchange> transcript;
};

/// Steps and answer for a consultation: every reference sentence but the
/// last is a step, the last is the answer.
Trajectory consultation_trajectory(const QARecord& record);

/// Fills whose normalized form equals the surface are correct; the rest go
/// to the equivalence judge. Entities with error_rate >= threshold become
/// pinpoints, at most one per sentence and `max_pinpoints` per record.
Rg2Result rg2_generate_pinpoints(const QARecord& record, const Rg2Params& params,
                                 const llm::Gateway& gateway, const PromptCatalog& prompts);

}  // namespace reflectforge
