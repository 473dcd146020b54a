#pragma once

#include <optional>
#include <string>
#include <vector>

#include "reflectforge/corpus.hpp"
#include "reflectforge/exchange.hpp"
#include "reflectforge/gateway.hpp"
#include "reflectforge/pinpoint.hpp"
#include "reflectforge/prompts.hpp"
#include "reflectforge/trajectory.hpp"

namespace reflectforge {

struct ReflectionDraft {
  Pinpoint pinpoint;
  /// R_q and R_a.
  std::string question;
  std::string answer;
  /// RG1: the revised sentence. RG2: the replacement entity W'.
  std::string corrected;
  /// The step that follows the reflection: the revised sentence (RG1,
  /// preceded by a rewritten previous sentence when one was given) or the
  /// erroneous sentence with W' put back (RG2).
  std::string corrected_step;
  /// RG1 neighbour rewrites.
  std::optional<std::string> revised_previous;
  std::optional<std::string> revised_next;
  /// Exchanges for the question, answer and modification calls, in order.
  std::vector<Exchange> transcript;

  const std::string& id() const { return pinpoint.id; }

  friend bool operator==(const ReflectionDraft&, const ReflectionDraft&) = default;
};

io::ordered_json to_json(const ReflectionDraft& d);
ReflectionDraft draft_from_json(const io::ordered_json& j);

struct ReflectionParams {
  double temperature = llm::defaults::kJudgeTemperature;
  int max_tokens = 512;
  /// Generations that fail a screen are requested again this many times.
  int regenerations = 1;
  /// Modification prompt sees the whole erroneous answer, not only the
  /// pinpoint sentence.
  bool full_context = true;
  std::size_t leakage_min_length = kLeakageMinLength;
};

/// True when `question` names an option letter ("option B", "(B)") or
/// quotes an option text of four or more characters.
bool leaks_option(std::string_view question, const QARecord& record);

/// Steps and answer as one paragraph.
std::string render_trajectory(const Trajectory& t);

/// R_q. The prompt states that the earlier answer was wrong. Screens: the
/// reply is non-empty (EmptyGeneration), ends with '?' and carries no
/// special token (MalformedGeneration), names no option (OptionLeak, RG1)
/// and copies no question fragment (LeakageDetected). A failed screen is
/// regenerated `regenerations` times before the error is raised.
std::string generate_reflection_question(const QARecord& record, const Pinpoint& pinpoint,
                                         const ReflectionParams& params,
                                         const llm::Gateway& gateway,
                                         const PromptCatalog& prompts,
                                         std::vector<Exchange>* transcript = nullptr);

/// R_a from a prompt holding R_q and nothing else. When `question` is given
/// the answer and the prompt are checked for verbatim fragments of it
/// (LeakageDetected).
std::string generate_reflection_answer(std::string_view reflection_question,
                                       const std::optional<std::string>& question,
                                       const std::string& tag_id, const ReflectionParams& params,
                                       const llm::Gateway& gateway, const PromptCatalog& prompts,
                                       std::vector<Exchange>* transcript = nullptr);

struct Modification {
  std::string corrected;
  std::string corrected_step;
  std::optional<std::string> revised_previous;
  std::optional<std::string> revised_next;
};

/// Parses "REVISED:", "PREVIOUS:" and "NEXT:" lines. Any other labelled line
/// is a wider rewrite (RewriteTooWide); no REVISED line is
/// MalformedGeneration.
Modification parse_rg1_modification(std::string_view reply);

/// Corrected statement for the pinpoint. Throws NoChangeProduced when the
/// output repeats the error, RewriteTooWide for RG1 edits beyond the
/// neighbours, EmptyGeneration and MalformedGeneration for unusable output.
Modification generate_modification(const QARecord& record, const Pinpoint& pinpoint,
                                   std::string_view reflection_question,
                                   std::string_view reflection_answer,
                                   const ReflectionParams& params, const llm::Gateway& gateway,
                                   const PromptCatalog& prompts,
                                   std::vector<Exchange>* transcript = nullptr);

/// Runs the three calls in sequence and checks that the result assembles
/// into a valid reflective trajectory (ValidationFailure otherwise).
ReflectionDraft build_reflection(const QARecord& record, const Pinpoint& pinpoint,
                                 const ReflectionParams& params, const llm::Gateway& gateway,
                                 const PromptCatalog& prompts);

struct DraftOutcome {
  std::string pinpoint_id;
  std::optional<ReflectionDraft> draft;
  std::optional<ErrorCode> error;
  std::string message;
};

/// One outcome per pinpoint, in input order; failures are data.
std::vector<DraftOutcome> build_reflections(const std::vector<QARecord>& records,
                                            const std::vector<Pinpoint>& pinpoints,
                                            const ReflectionParams& params,
                                            const llm::Gateway& gateway,
                                            const PromptCatalog& prompts);

/// "Therefore, the answer is (C) clopidogrel."
std::string gold_statement(const QARecord& record);

/// Reflective trajectory for a group of drafts from the same erroneous
/// answer: one RG1 draft, or the RG2 drafts of one record (distinct steps).
ReflectiveTrajectory assemble_drafts(const std::vector<const ReflectionDraft*>& drafts,
                                     const QARecord& record);

}  // namespace reflectforge
