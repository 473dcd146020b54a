#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace reflectforge {

/// Minimum length of a verbatim question fragment that counts as leakage
/// into a closed-book reflection answer.
inline constexpr std::size_t kLeakageMinLength = 15;

enum class StepKind { original, erroneous, corrected };

std::string_view to_string(StepKind kind) noexcept;

struct Step {
  std::size_t index = 0;
  std::string text;
  StepKind kind = StepKind::original;

  friend bool operator==(const Step&, const Step&) = default;
};

/// A reasoning trajectory: ordered steps followed by a final answer.
struct Trajectory {
  std::string question_id;
  std::vector<Step> steps;
  std::string answer;

  /// Builds a trajectory of original steps indexed 0..n-1.
  static Trajectory from_sentences(std::string question_id,
                                   const std::vector<std::string>& sentences,
                                   std::string answer);

  bool is_erroneous() const;
  std::vector<std::string> step_texts() const;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Self-posed question and closed-book answer targeting one erroneous step.
/// After ablation projection either field may be empty, never both.
struct ReflectionPair {
  std::string question;
  std::string answer;
  std::size_t pinpoint_index = 0;

  friend bool operator==(const ReflectionPair&, const ReflectionPair&) = default;
};

using Segment = std::variant<Step, ReflectionPair>;

/// Segments follow `original* (erroneous reflection corrected original*)+`,
/// then the final answer.
struct ReflectiveTrajectory {
  std::string question_id;
  std::vector<Segment> segments;
  std::string answer;

  std::size_t reflection_count() const;

  friend bool operator==(const ReflectiveTrajectory&,
                         const ReflectiveTrajectory&) = default;
};

struct SpecialTokens {
  std::string think_open = "<Think>";
  std::string think_close = "</Think>";
  std::string modified_open = "<Modified>";
  std::string modified_close = "</Modified>";

  /// Canonical order: think open/close, modified open/close.
  std::array<std::string_view, 4> all() const {
    return {think_open, think_close, modified_open, modified_close};
  }

  /// Throws InvalidArgument when a token is empty or two tokens coincide.
  void check() const;

  /// First token literal contained in `s`, if any.
  std::optional<std::string_view> find_in(std::string_view s) const;

  friend bool operator==(const SpecialTokens&, const SpecialTokens&) = default;
};

/// Which segment shapes a text or value may contain.
///  full:    every think block carries both question and answer.
///  partial: think blocks may carry only one of the two (ablations).
///  plain:   no think blocks at all.
enum class Grammar { full, partial, plain };

enum class AblationMode { full, no_reflect, question_only, answer_only, original };

std::string_view to_string(AblationMode mode) noexcept;
std::optional<AblationMode> parse_ablation_mode(std::string_view s);
Grammar grammar_for(AblationMode mode) noexcept;
inline constexpr std::array<AblationMode, 5> kAllAblationModes = {
    AblationMode::full, AblationMode::no_reflect, AblationMode::question_only,
    AblationMode::answer_only, AblationMode::original};

struct ReflectionEdit {
  std::size_t pinpoint_index = 0;
  std::string erroneous_text;
  ReflectionPair reflection;
  std::string corrected_text;
};

/// Splices one (erroneous, reflection, corrected) triple into `base` at
/// `pinpoint_index`. Steps before the pinpoint are copied unchanged, the
/// base step at the pinpoint is replaced by the triple, and the rest follow.
ReflectiveTrajectory assemble_reflective(const Trajectory& base,
                                         std::size_t pinpoint_index,
                                         std::string erroneous_text,
                                         ReflectionPair reflection,
                                         std::string corrected_text);

/// Multi-pinpoint form; edits must target distinct steps.
ReflectiveTrajectory assemble_reflective(const Trajectory& base,
                                         std::vector<ReflectionEdit> edits);

std::string serialize_training_text(const ReflectiveTrajectory& t,
                                    const SpecialTokens& tokens = {});

ReflectiveTrajectory parse_training_text(std::string_view s,
                                         const SpecialTokens& tokens = {},
                                         Grammar grammar = Grammar::full);

enum class ViolationKind {
  empty_text,
  empty_answer,
  empty_reflection,
  orphan_reflection,
  missing_reflection,
  missing_correction,
  orphan_correction,
  no_reflection,
  unexpected_reflection,
  index_order,
  pinpoint_mismatch,
  token_collision,
  leakage,
};

std::string_view to_string(ViolationKind kind) noexcept;

struct Violation {
  std::size_t segment_index = 0;
  ViolationKind kind = ViolationKind::empty_text;
  std::string message;
};

struct ValidateOptions {
  Grammar grammar = Grammar::full;
  /// When set, reflection answers are screened for verbatim fragments of it.
  std::optional<std::string> question;
  SpecialTokens tokens;
  std::size_t leakage_min_length = kLeakageMinLength;
};

/// Every invariant violation, in segment order. The answer is reported with
/// segment_index == segments.size().
std::vector<Violation> validate(const ReflectiveTrajectory& t,
                                const ValidateOptions& options = {});

ReflectiveTrajectory project_ablation(const ReflectiveTrajectory& t,
                                      AblationMode mode);

/// Drops erroneous steps and reflections, keeping the repaired reasoning.
Trajectory to_trajectory(const ReflectiveTrajectory& t);

/// Whitespace-collapsed copy with canonical step numbering; the basis of
/// structural equality.
ReflectiveTrajectory normalized(const ReflectiveTrajectory& t);

/// Equality over segments and answer, ignoring question_id, whitespace
/// layout and raw index values.
bool structurally_equal(const ReflectiveTrajectory& a,
                        const ReflectiveTrajectory& b);

/// Number of balanced think blocks in free text; nullopt when the tokens are
/// unbalanced or nested.
std::optional<std::size_t> count_think_blocks(std::string_view s,
                                              const SpecialTokens& tokens = {});

}  // namespace reflectforge
