#include "reflectforge/prompts.hpp"

#include <fstream>
#include <sstream>

#include "reflectforge/error.hpp"

namespace reflectforge {

namespace detail {
std::string_view default_prompt(std::string_view name);
}

std::string_view to_string(PromptId id) noexcept {
  switch (id) {
    case PromptId::relevance: return "relevance";
    case PromptId::rg1_sample: return "rg1_sample";
    case PromptId::entity_extract: return "entity_extract";
    case PromptId::mask_fill: return "mask_fill";
    case PromptId::equivalence_judge: return "equivalence_judge";
    case PromptId::reflection_question: return "reflection_question";
    case PromptId::reflection_answer: return "reflection_answer";
    case PromptId::modification_rg1: return "modification_rg1";
    case PromptId::modification_rg2: return "modification_rg2";
    case PromptId::filter_rg1: return "filter_rg1";
    case PromptId::filter_rg2: return "filter_rg2";
    case PromptId::eval_question: return "eval_question";
  }
  return "";
}

PromptCatalog PromptCatalog::defaults() {
  PromptCatalog c;
  for (auto id : kAllPrompts) {
    auto text = detail::default_prompt(to_string(id));
    if (text.empty()) {
      throw Error(ErrorCode::ConfigError,
                  "no built-in template for " + std::string(to_string(id)));
    }
    c.templates_[id] = std::string(text);
  }
  return c;
}

PromptCatalog PromptCatalog::load(const std::filesystem::path& dir) {
  PromptCatalog c = defaults();
  if (dir.empty()) return c;
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorCode::ConfigError, "prompt catalog is not a directory: " + dir.string());
  }
  for (auto id : kAllPrompts) {
    const auto file = dir / (std::string(to_string(id)) + ".txt");
    if (!std::filesystem::exists(file)) continue;
    std::ifstream in(file, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    c.templates_[id] = ss.str();
  }
  return c;
}

const std::string& PromptCatalog::raw(PromptId id) const { return templates_.at(id); }

void PromptCatalog::set(PromptId id, std::string text) { templates_[id] = std::move(text); }

std::string PromptCatalog::render(PromptId id, const PromptVars& vars) const {
  try {
    return render_template(raw(id), vars);
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError,
                "template " + std::string(to_string(id)) + ": " + e.what());
  }
}

std::string render_template(std::string_view tmpl, const PromptVars& vars) {
  std::string out;
  out.reserve(tmpl.size() * 2);
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    const char c = tmpl[i];
    if (c == '{' && i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
      out.push_back('{');
      ++i;
      continue;
    }
    if (c == '}' && i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
      out.push_back('}');
      ++i;
      continue;
    }
    if (c != '{') {
      out.push_back(c);
      continue;
    }
    const auto close = tmpl.find('}', i + 1);
    if (close == std::string_view::npos) {
      throw Error(ErrorCode::ConfigError, "unterminated placeholder");
    }
    const auto name = tmpl.substr(i + 1, close - i - 1);
    auto it = vars.find(name);
    if (it == vars.end()) {
      throw Error(ErrorCode::ConfigError, "no value for {" + std::string(name) + "}");
    }
    out += it->second;
    i = close;
  }
  return out;
}

std::string make_tag(std::string_view task, std::string_view id, std::size_t ordinal) {
  std::string tag(task);
  tag.push_back('|');
  tag.append(id);
  tag.push_back('|');
  tag += std::to_string(ordinal);
  return tag;
}

std::string_view task_of(std::string_view tag) {
  return tag.substr(0, tag.find('|'));
}

}  // namespace reflectforge
