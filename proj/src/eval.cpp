#include "reflectforge/eval.hpp"

#include <algorithm>
#include <numeric>

#include "reflectforge/error.hpp"
#include "reflectforge/pinpoint.hpp"
#include "reflectforge/text.hpp"

namespace reflectforge {

std::string_view to_string(ChoicePolicy p) noexcept {
  return p == ChoicePolicy::letters ? "letters" : "letters_then_text";
}

std::optional<ChoicePolicy> parse_choice_policy(std::string_view s) {
  if (s == "letters") return ChoicePolicy::letters;
  if (s == "letters_then_text") return ChoicePolicy::letters_then_text;
  return std::nullopt;
}

std::string_view to_string(UnparsedPolicy p) noexcept {
  return p == UnparsedPolicy::incorrect ? "incorrect" : "exclude";
}

std::optional<UnparsedPolicy> parse_unparsed_policy(std::string_view s) {
  if (s == "incorrect") return UnparsedPolicy::incorrect;
  if (s == "exclude") return UnparsedPolicy::exclude;
  return std::nullopt;
}

std::string extract_choice(std::string_view response,
                           const std::map<std::string, std::string>& options,
                           ChoicePolicy policy) {
  std::vector<std::string> letters;
  for (const auto& [k, v] : options) letters.push_back(k);
  try {
    return extract_decision(response, letters);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoDecisionFound || policy == ChoicePolicy::letters) throw;
  }
  // Padded so that a match always sits on word boundaries.
  const auto hay = " " + text::normalize_for_match(response) + " ";
  std::optional<std::string> best;
  std::size_t best_pos = 0, best_len = 0;
  for (const auto& [letter, option] : options) {
    const auto needle = text::normalize_for_match(option);
    if (needle.empty()) continue;
    const auto pos = hay.rfind(" " + needle + " ");
    if (pos == std::string::npos) continue;
    if (!best || pos > best_pos || (pos == best_pos && needle.size() > best_len)) {
      best = letter;
      best_pos = pos;
      best_len = needle.size();
    }
  }
  if (!best) throw Error(ErrorCode::NoDecisionFound, "no option letter or option text in response");
  return *best;
}

ReflectionStats reflection_statistics(const std::vector<std::string>& responses,
                                      const SpecialTokens& tokens) {
  ReflectionStats s;
  s.responses = responses.size();
  std::size_t length = 0;
  for (const auto& r : responses) {
    length += r.size();
    auto blocks = count_think_blocks(r, tokens);
    if (!blocks) {
      ++s.unbalanced;
      blocks = 0;
    }
    ++s.distribution[*blocks];
    s.total_blocks += *blocks;
    if (*blocks > 0) ++s.reflecting;
  }
  if (s.responses > 0) {
    const auto n = static_cast<double>(s.responses);
    s.fraction_reflecting = static_cast<double>(s.reflecting) / n;
    s.mean_blocks = static_cast<double>(s.total_blocks) / n;
    s.mean_length = static_cast<double>(length) / n;
  }
  return s;
}

io::ordered_json to_json(const ReflectionStats& s) {
  auto opt = [](const std::optional<double>& v) {
    return v ? io::ordered_json(*v) : io::ordered_json(nullptr);
  };
  io::ordered_json dist = io::ordered_json::object();
  for (const auto& [k, v] : s.distribution) dist[std::to_string(k)] = v;
  return {{"responses", s.responses},
          {"reflecting", s.reflecting},
          {"fraction_reflecting", opt(s.fraction_reflecting)},
          {"mean_blocks", opt(s.mean_blocks)},
          {"mean_length", opt(s.mean_length)},
          {"unbalanced", s.unbalanced},
          {"distribution", std::move(dist)}};
}

EvalResult evaluate_model(const EvalConfig& config, const llm::Gateway& gateway,
                          const PromptCatalog& prompts) {
  std::vector<QARecord> records;
  try {
    records = load_multichoice(config.dataset, config.schema);
  } catch (const Error& e) {
    throw Error(ErrorCode::DatasetError, "benchmark " + config.benchmark + ": " + e.what());
  }
  return evaluate_records(config, std::move(records), gateway, prompts);
}

EvalResult evaluate_records(const EvalConfig& config, std::vector<QARecord> records,
                            const llm::Gateway& gateway, const PromptCatalog& prompts) {
  if (config.repeats < 1) throw Error(ErrorCode::InvalidArgument, "repeats must be >= 1");
  for (const auto& r : records) {
    if (r.options.size() < 2) {
      throw Error(ErrorCode::DatasetError, "item " + r.id + " is not a multiple-choice question");
    }
  }
  std::sort(records.begin(), records.end(),
            [](const QARecord& a, const QARecord& b) { return a.id < b.id; });

  EvalResult out;
  out.benchmark = config.benchmark;
  out.n_items = records.size();
  std::vector<std::string> responses;
  for (int rep = 0; rep < config.repeats; ++rep) {
    std::vector<llm::ChatRequest> requests;
    requests.reserve(records.size());
    for (const auto& r : records) {
      requests.push_back(llm::ChatRequest::user(
          prompts.render(PromptId::eval_question,
                         {{"question", r.question}, {"options", format_options(r)}}),
          config.params, make_tag(task::eval, r.id, static_cast<std::size_t>(rep))));
    }
    const auto replies = gateway.complete_many(requests);
    std::size_t correct = 0, scored = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
      ItemResult item;
      item.repeat = rep;
      item.id = records[i].id;
      item.gold = records[i].gold;
      if (!replies[i].ok()) {
        item.failed = true;
        item.response = replies[i].error_message;
      } else {
        item.response = replies[i].content;
        responses.push_back(item.response);
        try {
          item.extracted = extract_choice(item.response, records[i].options, config.choice);
          item.correct = item.extracted == item.gold;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::NoDecisionFound) throw;
          item.unparsed = true;
        }
      }
      const bool excluded =
          (item.unparsed || item.failed) && config.unparsed == UnparsedPolicy::exclude;
      if (!excluded) ++scored;
      if (item.correct) ++correct;
      out.items.push_back(std::move(item));
    }
    out.per_repeat.push_back(scored == 0 ? 0.0
                                         : static_cast<double>(correct) / static_cast<double>(scored));
  }
  out.mean_accuracy = std::accumulate(out.per_repeat.begin(), out.per_repeat.end(), 0.0) /
                      static_cast<double>(out.per_repeat.size());
  out.reflection = reflection_statistics(responses, config.tokens);
  return out;
}

io::ordered_json to_json(const EvalResult& r, const io::ordered_json& config_echo) {
  io::ordered_json items = io::ordered_json::array();
  for (const auto& i : r.items) {
    items.push_back({{"repeat", i.repeat},
                     {"id", i.id},
                     {"gold", i.gold},
                     {"extracted", i.extracted},
                     {"correct", i.correct},
                     {"unparsed", i.unparsed},
                     {"failed", i.failed},
                     {"response", i.response}});
  }
  io::ordered_json j;
  if (!config_echo.is_null()) j["config"] = config_echo;
  j["benchmark"] = r.benchmark;
  j["n_items"] = r.n_items;
  j["per_repeat"] = r.per_repeat;
  j["mean_accuracy"] = r.mean_accuracy;
  j["reflection"] = to_json(r.reflection);
  j["items"] = std::move(items);
  return j;
}

std::string items_csv(const EvalResult& r) {
  auto quote = [](const std::string& s) {
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  std::string out = "repeat,id,gold,extracted,correct,unparsed,failed,response\n";
  for (const auto& i : r.items) {
    out += std::to_string(i.repeat) + "," + quote(i.id) + "," + i.gold + "," + i.extracted + "," +
           (i.correct ? "1" : "0") + "," + (i.unparsed ? "1" : "0") + "," + (i.failed ? "1" : "0") +
           "," + quote(i.response) + "\n";
  }
  return out;
}

}  // namespace reflectforge
