#include "reflectforge/reflection.hpp"

#include <map>
#include <regex>

#include "reflectforge/error.hpp"
#include "reflectforge/parallel.hpp"
#include "reflectforge/text.hpp"

namespace reflectforge {

using json = nlohmann::json;

io::ordered_json to_json(const ReflectionDraft& d) {
  io::ordered_json j;
  j["id"] = d.pinpoint.id;
  j["record_id"] = d.pinpoint.record_id;
  j["pathway"] = to_string(d.pinpoint.pathway);
  j["question"] = d.question;
  j["answer"] = d.answer;
  j["corrected"] = d.corrected;
  j["corrected_step"] = d.corrected_step;
  if (d.revised_previous) j["revised_previous"] = *d.revised_previous;
  if (d.revised_next) j["revised_next"] = *d.revised_next;
  j["pinpoint"] = to_json(d.pinpoint);
  io::ordered_json tr = io::ordered_json::array();
  for (const auto& e : d.transcript) tr.push_back(to_json(e));
  j["transcript"] = std::move(tr);
  return j;
}

ReflectionDraft draft_from_json(const io::ordered_json& j) {
  ReflectionDraft d;
  try {
    d.pinpoint = pinpoint_from_json(j.at("pinpoint"));
    d.question = j.at("question").get<std::string>();
    d.answer = j.at("answer").get<std::string>();
    d.corrected = j.at("corrected").get<std::string>();
    d.corrected_step = j.at("corrected_step").get<std::string>();
    if (j.contains("revised_previous")) d.revised_previous = j["revised_previous"].get<std::string>();
    if (j.contains("revised_next")) d.revised_next = j["revised_next"].get<std::string>();
    for (const auto& e : j.value("transcript", io::ordered_json::array())) {
      d.transcript.push_back(exchange_from_json(e));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("draft: ") + e.what());
  }
  return d;
}

bool leaks_option(std::string_view question, const QARecord& record) {
  if (record.options.empty()) return false;
  const std::string q(question);
  for (const auto& [letter, option_text] : record.options) {
    const std::regex named(R"(\b(?:option|choice|answer)\s*\(?)" + letter +
                               R"(\)?(?![A-Za-z0-9])|\(\s*)" + letter + R"(\s*\))",
                           std::regex::ECMAScript | std::regex::icase);
    if (std::regex_search(q, named)) return true;
    const std::string norm = text::normalize_for_match(option_text);
    if (norm.size() >= 4) {
      const std::string padded = " " + text::normalize_for_match(q) + " ";
      if (padded.find(" " + norm + " ") != std::string::npos) return true;
    }
  }
  return false;
}

std::string render_trajectory(const Trajectory& t) {
  auto parts = t.step_texts();
  parts.push_back(t.answer);
  return text::join(parts, " ");
}

namespace {

llm::GenerationParams gen_params(const ReflectionParams& p) {
  llm::GenerationParams g;
  g.temperature = p.temperature;
  g.max_tokens = p.max_tokens;
  return g;
}

std::string question_context(const QARecord& record) {
  if (record.options.empty()) return record.question;
  return record.question + "\n" + format_options(record);
}

// Drops a leading "Label:" the model may echo back.
std::string strip_label(std::string s, std::string_view label) {
  s = text::collapse_whitespace(s);
  if (text::starts_with_icase(s, label)) s = text::trim(std::string_view(s).substr(label.size()));
  return s;
}

// Calls the model until `screen` accepts the cleaned reply or the budget
// runs out; the last screen error is raised.
template <typename Clean, typename Screen>
std::string generate_screened(const llm::ChatRequest& base, std::string_view task_name,
                              const std::string& tag_id, const ReflectionParams& params,
                              const llm::Gateway& gateway, std::vector<Exchange>* transcript,
                              Clean clean, Screen screen) {
  std::optional<Error> last;
  for (int attempt = 0; attempt <= params.regenerations; ++attempt) {
    llm::ChatRequest req = base;
    req.tag = make_tag(task_name, tag_id, static_cast<std::size_t>(attempt));
    const auto resp = gateway.complete(req);
    if (transcript) transcript->push_back(make_exchange(req, resp));
    std::string out = clean(resp.content);
    if (text::trim(out).empty()) {
      last = Error(ErrorCode::EmptyGeneration, std::string(task_name) + " returned nothing");
      continue;
    }
    if (auto problem = screen(out)) {
      last = *problem;
      continue;
    }
    return out;
  }
  throw *last;
}

}  // namespace

std::string generate_reflection_question(const QARecord& record, const Pinpoint& pinpoint,
                                         const ReflectionParams& params,
                                         const llm::Gateway& gateway,
                                         const PromptCatalog& prompts,
                                         std::vector<Exchange>* transcript) {
  if (pinpoint.step_index >= pinpoint.trajectory.steps.size() ||
      text::collapse_whitespace(pinpoint.trajectory.steps[pinpoint.step_index].text) !=
          text::collapse_whitespace(pinpoint.erroneous_text)) {
    throw Error(ErrorCode::InvalidArgument, "pinpoint " + pinpoint.id + " is not in its trajectory");
  }
  const auto req = llm::ChatRequest::user(
      prompts.render(PromptId::reflection_question,
                     {{"question", question_context(record)},
                      {"erroneous_trajectory", render_trajectory(pinpoint.trajectory)},
                      {"erroneous_step", pinpoint.erroneous_text}}),
      gen_params(params), "");
  const SpecialTokens tokens;
  return generate_screened(
      req, task::reflection_question, pinpoint.id, params, gateway, transcript,
      [](const std::string& raw) { return strip_label(raw, "Question:"); },
      [&](const std::string& q) -> std::optional<Error> {
        if (q.back() != '?') {
          return Error(ErrorCode::MalformedGeneration, "reflection question does not end in '?'");
        }
        if (tokens.find_in(q)) {
          return Error(ErrorCode::MalformedGeneration, "reflection question holds a special token");
        }
        if (pinpoint.pathway == Pathway::rg1 && leaks_option(q, record)) {
          return Error(ErrorCode::OptionLeak, "reflection question names an option: " + q);
        }
        if (text::shares_substring(record.question, q, params.leakage_min_length)) {
          return Error(ErrorCode::LeakageDetected, "reflection question copies the question");
        }
        return std::nullopt;
      });
}

std::string generate_reflection_answer(std::string_view reflection_question,
                                       const std::optional<std::string>& question,
                                       const std::string& tag_id, const ReflectionParams& params,
                                       const llm::Gateway& gateway, const PromptCatalog& prompts,
                                       std::vector<Exchange>* transcript) {
  if (text::trim(reflection_question).empty()) {
    throw Error(ErrorCode::InvalidArgument, "empty reflection question");
  }
  const auto req = llm::ChatRequest::user(
      prompts.render(PromptId::reflection_answer,
                     {{"reflection_question", std::string(reflection_question)}}),
      gen_params(params), "");
  if (question && text::shares_substring(*question, req.prompt_text(), params.leakage_min_length)) {
    throw Error(ErrorCode::LeakageDetected, "closed-book prompt would contain the question");
  }
  const SpecialTokens tokens;
  return generate_screened(
      req, task::reflection_answer, tag_id, params, gateway, transcript,
      [](const std::string& raw) { return strip_label(raw, "Answer:"); },
      [&](const std::string& a) -> std::optional<Error> {
        if (tokens.find_in(a)) {
          return Error(ErrorCode::MalformedGeneration, "reflection answer holds a special token");
        }
        if (question && text::shares_substring(*question, a, params.leakage_min_length)) {
          return Error(ErrorCode::LeakageDetected, "reflection answer copies the question");
        }
        return std::nullopt;
      });
}

Modification parse_rg1_modification(std::string_view reply) {
  static const std::regex label(R"(^\s*\**\s*([A-Za-z][A-Za-z _0-9]*?)\s*\**\s*:\s*(.*)$)");
  std::map<std::string, std::string> fields;
  std::string current;
  std::size_t pos = 0;
  const std::string s(reply);
  while (pos <= s.size()) {
    auto end = s.find('\n', pos);
    if (end == std::string::npos) end = s.size();
    const std::string line = s.substr(pos, end - pos);
    pos = end + 1;
    std::smatch m;
    if (std::regex_match(line, m, label)) {
      std::string key = m[1].str();
      for (auto& c : key) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      if (key == "REVISED" || key == "PREVIOUS" || key == "NEXT") {
        current = key;
        fields[current] += " " + m[2].str();
        continue;
      }
      if (key.starts_with("STEP") || key.starts_with("SENTENCE") || key.starts_with("LINE") ||
          key.starts_with("REVISED ")) {
        throw Error(ErrorCode::RewriteTooWide, "modification edits \"" + m[1].str() + "\"");
      }
    }
    if (!current.empty()) fields[current] += " " + line;
  }
  Modification out;
  auto take = [&](const char* key) -> std::optional<std::string> {
    auto it = fields.find(key);
    if (it == fields.end()) return std::nullopt;
    std::string v = text::collapse_whitespace(it->second);
    if (v.empty()) return std::nullopt;
    return v;
  };
  auto revised = take("REVISED");
  if (!revised) throw Error(ErrorCode::MalformedGeneration, "no REVISED line in modification");
  out.corrected = *revised;
  out.revised_previous = take("PREVIOUS");
  out.revised_next = take("NEXT");
  return out;
}

Modification generate_modification(const QARecord& record, const Pinpoint& pinpoint,
                                   std::string_view reflection_question,
                                   std::string_view reflection_answer,
                                   const ReflectionParams& params, const llm::Gateway& gateway,
                                   const PromptCatalog& prompts,
                                   std::vector<Exchange>* transcript) {
  const std::string context = params.full_context ? render_trajectory(pinpoint.trajectory)
                                                  : pinpoint.erroneous_text;
  const SpecialTokens tokens;

  if (pinpoint.pathway == Pathway::rg1) {
    if (!pinpoint.rg1) throw Error(ErrorCode::InvalidArgument, "RG1 pinpoint without detail");
    const auto req = llm::ChatRequest::user(
        prompts.render(PromptId::modification_rg1,
                       {{"question", record.question},
                        {"options", format_options(record)},
                        {"erroneous_trajectory", context},
                        {"erroneous_step", pinpoint.erroneous_text},
                        {"reflection_question", std::string(reflection_question)},
                        {"reflection_answer", std::string(reflection_answer)}}),
        gen_params(params), "");
    const std::size_t idx = pinpoint.step_index;
    const std::size_t n_steps = pinpoint.trajectory.steps.size();
    Modification result;
    std::optional<Error> last;
    for (int attempt = 0; attempt <= params.regenerations; ++attempt) {
      llm::ChatRequest r = req;
      r.tag = make_tag(task::modification_rg1, pinpoint.id, static_cast<std::size_t>(attempt));
      const auto resp = gateway.complete(r);
      if (transcript) transcript->push_back(make_exchange(r, resp));
      if (text::trim(resp.content).empty()) {
        last = Error(ErrorCode::EmptyGeneration, "modification returned nothing");
        continue;
      }
      Modification mod;
      try {
        mod = parse_rg1_modification(resp.content);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::RewriteTooWide) throw;
        last = e;
        continue;
      }
      if ((mod.revised_previous && idx == 0) || (mod.revised_next && idx + 1 >= n_steps)) {
        throw Error(ErrorCode::RewriteTooWide, "neighbour rewrite past the reasoning steps");
      }
      const bool has_token = tokens.find_in(mod.corrected) ||
                             (mod.revised_previous && tokens.find_in(*mod.revised_previous)) ||
                             (mod.revised_next && tokens.find_in(*mod.revised_next));
      if (has_token) {
        last = Error(ErrorCode::MalformedGeneration, "modification holds a special token");
        continue;
      }
      const bool same = text::normalize_for_match(mod.corrected) ==
                        text::normalize_for_match(pinpoint.erroneous_text);
      bool still_wrong = false;
      try {
        still_wrong = extract_decision(mod.corrected, record.option_letters()) ==
                      pinpoint.rg1->wrong_option;
      } catch (const Error&) {
      }
      if (same || still_wrong) {
        last = Error(ErrorCode::NoChangeProduced, "revised statement repeats the error");
        continue;
      }
      result = std::move(mod);
      result.corrected_step = result.revised_previous
                                  ? *result.revised_previous + " " + result.corrected
                                  : result.corrected;
      return result;
    }
    throw *last;
  }

  if (!pinpoint.rg2) throw Error(ErrorCode::InvalidArgument, "RG2 pinpoint without detail");
  const auto& ent = *pinpoint.rg2;
  const auto req = llm::ChatRequest::user(
      prompts.render(PromptId::modification_rg2,
                     {{"entity_type", std::string(to_string(ent.type))},
                      {"question", record.question},
                      {"erroneous_step", pinpoint.erroneous_text},
                      {"wrong_term", ent.wrong_fill},
                      {"reflection_question", std::string(reflection_question)},
                      {"reflection_answer", std::string(reflection_answer)}}),
      gen_params(params), "");
  // The wrong fill sits where the surface first occurred in the clean text.
  const auto offset = pinpoint.original_text.find(ent.surface);
  if (offset == std::string::npos ||
      pinpoint.erroneous_text.compare(offset, ent.wrong_fill.size(), ent.wrong_fill) != 0) {
    throw Error(ErrorCode::InvalidArgument, "pinpoint " + pinpoint.id + " has inconsistent texts");
  }
  const std::string entity = generate_screened(
      req, task::modification_rg2, pinpoint.id, params, gateway, transcript,
      [](const std::string& raw) {
        std::string first = raw.substr(0, raw.find('\n'));
        return text::clean_phrase(strip_label(first, "Term:"));
      },
      [&](const std::string& w) -> std::optional<Error> {
        if (tokens.find_in(w) || w.find('[') != std::string::npos) {
          return Error(ErrorCode::MalformedGeneration, "replacement term holds markup");
        }
        std::size_t words = 1;
        for (char c : w) words += c == ' ';
        if (words > 8 || w.find(". ") != std::string::npos) {
          return Error(ErrorCode::MalformedGeneration, "replacement is a sentence, not a term");
        }
        if (text::normalize_for_match(w) == text::normalize_for_match(ent.wrong_fill)) {
          return Error(ErrorCode::NoChangeProduced, "replacement equals the wrong term");
        }
        return std::nullopt;
      });
  Modification out;
  out.corrected = entity;
  out.corrected_step = pinpoint.erroneous_text.substr(0, offset) + entity +
                       pinpoint.erroneous_text.substr(offset + ent.wrong_fill.size());
  return out;
}

std::string gold_statement(const QARecord& record) {
  auto it = record.options.find(record.gold);
  std::string s = "Therefore, the answer is (" + record.gold + ")";
  if (it != record.options.end()) s += " " + text::collapse_whitespace(it->second);
  return s + ".";
}

ReflectiveTrajectory assemble_drafts(const std::vector<const ReflectionDraft*>& drafts,
                                     const QARecord& record) {
  if (drafts.empty()) throw Error(ErrorCode::InvalidArgument, "no drafts to assemble");
  const Pathway pathway = drafts.front()->pinpoint.pathway;
  Trajectory base;
  if (pathway == Pathway::rg1) {
    if (drafts.size() != 1) {
      throw Error(ErrorCode::InvalidArgument, "RG1 drafts assemble one at a time");
    }
    const auto& d = *drafts.front();
    base = d.pinpoint.trajectory;
    for (auto& s : base.steps) s.kind = StepKind::original;
    if (d.revised_next) base.steps.at(d.pinpoint.step_index + 1).text = *d.revised_next;
    base.answer = gold_statement(record);
  } else {
    base = consultation_trajectory(record);
  }
  std::vector<ReflectionEdit> edits;
  for (const auto* d : drafts) {
    if (d->pinpoint.record_id != record.id || d->pinpoint.pathway != pathway) {
      throw Error(ErrorCode::InvalidArgument, "draft " + d->id() + " does not belong here");
    }
    edits.push_back({d->pinpoint.step_index, d->pinpoint.erroneous_text,
                     ReflectionPair{d->question, d->answer, d->pinpoint.step_index},
                     d->corrected_step});
  }
  auto t = assemble_reflective(base, std::move(edits));
  t.question_id = record.id;
  return t;
}

ReflectionDraft build_reflection(const QARecord& record, const Pinpoint& pinpoint,
                                 const ReflectionParams& params, const llm::Gateway& gateway,
                                 const PromptCatalog& prompts) {
  if (pinpoint.record_id != record.id) {
    throw Error(ErrorCode::InvalidArgument, "pinpoint " + pinpoint.id + " is for another record");
  }
  ReflectionDraft d;
  d.pinpoint = pinpoint;
  d.question =
      generate_reflection_question(record, pinpoint, params, gateway, prompts, &d.transcript);
  d.answer = generate_reflection_answer(d.question, record.question, pinpoint.id, params, gateway,
                                        prompts, &d.transcript);
  auto mod = generate_modification(record, pinpoint, d.question, d.answer, params, gateway,
                                   prompts, &d.transcript);
  d.corrected = std::move(mod.corrected);
  d.corrected_step = std::move(mod.corrected_step);
  d.revised_previous = std::move(mod.revised_previous);
  d.revised_next = std::move(mod.revised_next);

  ValidateOptions vo;
  vo.question = record.question;
  vo.leakage_min_length = params.leakage_min_length;
  ReflectiveTrajectory t;
  try {
    t = assemble_drafts({&d}, record);
  } catch (const Error& e) {
    throw Error(ErrorCode::ValidationFailure, e.what());
  }
  const auto violations = validate(t, vo);
  if (!violations.empty()) {
    throw Error(ErrorCode::ValidationFailure,
                "draft " + d.id() + ": " + violations.front().message);
  }
  return d;
}

std::vector<DraftOutcome> build_reflections(const std::vector<QARecord>& records,
                                            const std::vector<Pinpoint>& pinpoints,
                                            const ReflectionParams& params,
                                            const llm::Gateway& gateway,
                                            const PromptCatalog& prompts) {
  std::map<std::string_view, const QARecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;
  std::vector<DraftOutcome> out(pinpoints.size());
  parallel_for(pinpoints.size(), static_cast<std::size_t>(gateway.config().max_in_flight),
               [&](std::size_t i) {
                 const auto& p = pinpoints[i];
                 auto& o = out[i];
                 o.pinpoint_id = p.id;
                 auto it = by_id.find(p.record_id);
                 if (it == by_id.end()) {
                   o.error = ErrorCode::InvalidArgument;
                   o.message = "no record " + p.record_id;
                   return;
                 }
                 try {
                   o.draft = build_reflection(*it->second, p, params, gateway, prompts);
                 } catch (const Error& e) {
                   o.error = e.code();
                   o.message = e.what();
                 }
               });
  return out;
}

}  // namespace reflectforge
