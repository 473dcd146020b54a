#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace reflectforge {

enum class PromptId {
  relevance,
  rg1_sample,
  entity_extract,
  mask_fill,
  equivalence_judge,
  reflection_question,
  reflection_answer,
  modification_rg1,
  modification_rg2,
  filter_rg1,
  filter_rg2,
  eval_question,
};

inline constexpr std::array<PromptId, 12> kAllPrompts = {
    PromptId::relevance,           PromptId::rg1_sample,
    PromptId::entity_extract,      PromptId::mask_fill,
    PromptId::equivalence_judge,   PromptId::reflection_question,
    PromptId::reflection_answer,   PromptId::modification_rg1,
    PromptId::modification_rg2,    PromptId::filter_rg1,
    PromptId::filter_rg2,          PromptId::eval_question};

/// File stem of the template, e.g. "mask_fill" for mask_fill.txt.
std::string_view to_string(PromptId id) noexcept;

using PromptVars = std::map<std::string, std::string, std::less<>>;

/// Plain-text templates with `{name}` placeholders. `{{` and `}}` render as
/// literal braces.
class PromptCatalog {
 public:
  static PromptCatalog defaults();

  /// Defaults overridden by any `<name>.txt` present in `dir`.
  static PromptCatalog load(const std::filesystem::path& dir);

  const std::string& raw(PromptId id) const;

  /// Throws ConfigError on a placeholder with no value or an unterminated
  /// brace.
  std::string render(PromptId id, const PromptVars& vars) const;

  void set(PromptId id, std::string text);

 private:
  std::map<PromptId, std::string> templates_;
};

std::string render_template(std::string_view tmpl, const PromptVars& vars);

/// Request tags are `<task>|<id>|<ordinal>`; the task part lets mocks and
/// logs tell call families apart.
namespace task {
inline constexpr std::string_view relevance = "relevance";
inline constexpr std::string_view rg1_sample = "rg1.sample";
inline constexpr std::string_view entity_extract = "rg2.extract";
inline constexpr std::string_view mask_fill = "rg2.fill";
inline constexpr std::string_view judge = "judge";
inline constexpr std::string_view reflection_question = "reflect.question";
inline constexpr std::string_view reflection_answer = "reflect.answer";
inline constexpr std::string_view modification_rg1 = "modify.rg1";
inline constexpr std::string_view modification_rg2 = "modify.rg2";
inline constexpr std::string_view filter_rg1 = "filter.rg1";
inline constexpr std::string_view filter_rg2 = "filter.rg2";
inline constexpr std::string_view eval = "eval";
}  // namespace task

std::string make_tag(std::string_view task, std::string_view id, std::size_t ordinal);
std::string_view task_of(std::string_view tag);

}  // namespace reflectforge
