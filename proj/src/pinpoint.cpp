#include "reflectforge/pinpoint.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <regex>

#include "reflectforge/error.hpp"
#include "reflectforge/text.hpp"

namespace reflectforge {

using json = nlohmann::json;

std::string_view to_string(Pathway p) noexcept { return p == Pathway::rg1 ? "RG1" : "RG2"; }

std::optional<Pathway> parse_pathway(std::string_view s) {
  if (s == "RG1" || s == "rg1") return Pathway::rg1;
  if (s == "RG2" || s == "rg2") return Pathway::rg2;
  return std::nullopt;
}

std::string_view to_string(EntityType t) noexcept {
  switch (t) {
    case EntityType::disease: return "disease";
    case EntityType::etiology: return "etiology";
    case EntityType::treatment: return "treatment";
    case EntityType::drug: return "drug";
    case EntityType::anatomy: return "anatomy";
    case EntityType::test: return "test";
    case EntityType::other: return "other";
  }
  return "other";
}

EntityType parse_entity_type(std::string_view s) {
  const std::string k = text::to_lower(text::trim(s));
  for (auto t : {EntityType::disease, EntityType::etiology, EntityType::treatment,
                 EntityType::drug, EntityType::anatomy, EntityType::test}) {
    if (k == to_string(t)) return t;
  }
  if (k == "medication" || k == "medicine") return EntityType::drug;
  if (k == "condition" || k == "diagnosis" || k == "symptom") return EntityType::disease;
  if (k == "cause") return EntityType::etiology;
  if (k == "procedure" || k == "therapy") return EntityType::treatment;
  if (k == "investigation" || k == "lab" || k == "lab test") return EntityType::test;
  return EntityType::other;
}

std::string placeholder_for(EntityType t) {
  std::string name(to_string(t));
  for (auto& c : name) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return "[" + name + "]";
}

// ---------------------------------------------------------------------------
// JSON

namespace {

StepKind parse_step_kind(std::string_view s) {
  if (s == "erroneous") return StepKind::erroneous;
  if (s == "corrected") return StepKind::corrected;
  return StepKind::original;
}

}  // namespace

io::ordered_json to_json(const Trajectory& t) {
  io::ordered_json steps = io::ordered_json::array();
  for (const auto& s : t.steps) {
    steps.push_back({{"index", s.index}, {"text", s.text}, {"kind", to_string(s.kind)}});
  }
  return {{"question_id", t.question_id}, {"steps", std::move(steps)}, {"answer", t.answer}};
}

Trajectory trajectory_from_json(const io::ordered_json& j) {
  Trajectory t;
  t.question_id = j.at("question_id").get<std::string>();
  for (const auto& s : j.at("steps")) {
    t.steps.push_back({s.at("index").get<std::size_t>(), s.at("text").get<std::string>(),
                       parse_step_kind(s.value("kind", std::string("original")))});
  }
  t.answer = j.at("answer").get<std::string>();
  return t;
}

io::ordered_json to_json(const Pinpoint& p) {
  io::ordered_json j;
  j["id"] = p.id;
  j["record_id"] = p.record_id;
  j["pathway"] = to_string(p.pathway);
  j["step_index"] = p.step_index;
  j["erroneous_text"] = p.erroneous_text;
  j["original_text"] = p.original_text;
  j["trajectory"] = to_json(p.trajectory);
  if (p.rg1) {
    j["rg1"] = {{"sampled_answer", p.rg1->sampled_answer}, {"wrong_option", p.rg1->wrong_option}};
  }
  if (p.rg2) {
    j["rg2"] = {{"surface", p.rg2->surface},
                {"type", to_string(p.rg2->type)},
                {"wrong_fill", p.rg2->wrong_fill},
                {"error_rate", p.rg2->error_rate}};
  }
  io::ordered_json tr = io::ordered_json::array();
  for (const auto& e : p.transcript) tr.push_back(to_json(e));
  j["transcript"] = std::move(tr);
  return j;
}

Pinpoint pinpoint_from_json(const io::ordered_json& j) {
  Pinpoint p;
  try {
    p.id = j.at("id").get<std::string>();
    p.record_id = j.at("record_id").get<std::string>();
    auto pathway = parse_pathway(j.at("pathway").get<std::string>());
    if (!pathway) throw Error(ErrorCode::SchemaMismatch, "unknown pathway in " + p.id);
    p.pathway = *pathway;
    p.step_index = j.at("step_index").get<std::size_t>();
    p.erroneous_text = j.at("erroneous_text").get<std::string>();
    p.original_text = j.at("original_text").get<std::string>();
    p.trajectory = trajectory_from_json(j.at("trajectory"));
    if (j.contains("rg1")) {
      const auto& d = j["rg1"];
      p.rg1 = Rg1Detail{d.at("sampled_answer").get<std::string>(),
                        d.at("wrong_option").get<std::string>()};
    }
    if (j.contains("rg2")) {
      const auto& d = j["rg2"];
      p.rg2 = MaskedEntity{d.at("surface").get<std::string>(),
                           parse_entity_type(d.at("type").get<std::string>()),
                           d.at("wrong_fill").get<std::string>(),
                           d.at("error_rate").get<double>()};
    }
    for (const auto& e : j.value("transcript", io::ordered_json::array())) {
      p.transcript.push_back(exchange_from_json(e));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("pinpoint: ") + e.what());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Decision extraction

namespace {

// Group 1 holds a parenthesised letter, group 2 a bare one.
constexpr const char* kLetter = R"((?:\(\s*([A-Za-z])\s*\)|([A-Za-z])(?![A-Za-z0-9])))";

const std::vector<std::regex>& decision_patterns() {
  static const std::vector<std::regex> patterns = [] {
    const std::string L = kLetter;
    const auto flags = std::regex::ECMAScript | std::regex::icase;
    return std::vector<std::regex>{
        std::regex(R"(answer\s+(?:is|would\s+be|should\s+be)\s*:?\s*(?:option\s+|choice\s+)?)" + L,
                   flags),
        std::regex(R"(final\s+answer\s*(?:is)?\s*:?\s*(?:option\s+)?)" + L, flags),
        std::regex(
            R"((?:best|correct|right|most\s+appropriate|most\s+likely)\s+(?:choice|option|answer)\s+(?:is|would\s+be)\s*:?\s*(?:option\s+)?)" +
                L,
            flags),
        std::regex(R"((?:option|choice)\s+)" + L + R"(\s+is\s+(?:the\s+)?(?:correct|right|best))",
                   flags),
        std::regex(R"(answer\s*:\s*(?:option\s+)?)" + L, flags),
        std::regex(R"((?:^|[\n:])\s*)" + L + R"(\s*[.)]?\s*$)", flags),
    };
  }();
  return patterns;
}

std::optional<std::string> try_extract(std::string_view s,
                                       const std::vector<std::string>& letters) {
  std::optional<std::string> best;
  std::ptrdiff_t best_pos = -1;
  const std::string str(s);
  for (const auto& re : decision_patterns()) {
    for (std::sregex_iterator it(str.begin(), str.end(), re), end; it != end; ++it) {
      const auto& m = *it;
      std::string letter;
      std::ptrdiff_t pos = 0;
      if (m[1].matched) {
        letter = m[1].str();
        pos = m.position(1);
      } else if (m[2].matched) {
        letter = m[2].str();
        pos = m.position(2);
        if (!std::isupper(static_cast<unsigned char>(letter[0]))) continue;
      } else {
        continue;
      }
      letter[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(letter[0])));
      if (std::find(letters.begin(), letters.end(), letter) == letters.end()) continue;
      if (pos > best_pos) {
        best_pos = pos;
        best = letter;
      }
    }
  }
  return best;
}

}  // namespace

std::string extract_decision(std::string_view answer_text,
                             const std::vector<std::string>& option_letters) {
  if (option_letters.empty()) {
    throw Error(ErrorCode::InvalidArgument, "extract_decision needs option letters");
  }
  auto letter = try_extract(answer_text, option_letters);
  if (!letter) throw Error(ErrorCode::NoDecisionFound, "no decision statement found");
  return *letter;
}

std::optional<std::size_t> decision_sentence(const std::vector<std::string>& sentences,
                                             const std::vector<std::string>& option_letters) {
  for (std::size_t i = sentences.size(); i-- > 0;) {
    if (try_extract(sentences[i], option_letters)) return i;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// RG1

std::string_view to_string(Rg1Policy p) noexcept { return p == Rg1Policy::first ? "first" : "all"; }

std::optional<Rg1Policy> parse_rg1_policy(std::string_view s) {
  if (s == "first") return Rg1Policy::first;
  if (s == "all") return Rg1Policy::all;
  return std::nullopt;
}

std::size_t locate_wrong_option_sentence(const std::vector<std::string>& steps,
                                         const QARecord& record, std::string_view letter) {
  if (steps.empty()) throw Error(ErrorCode::InvalidArgument, "no steps to search");
  const std::string l(letter);
  const std::regex mention(R"(\(\s*)" + l + R"(\s*\)|\b(?:option|choice)\s+\(?)" + l +
                               R"(\)?(?![A-Za-z0-9])|^\s*)" + l + R"(\s*[).:])",
                           std::regex::ECMAScript | std::regex::icase);
  std::string option_text;
  if (auto it = record.options.find(l); it != record.options.end()) {
    option_text = text::normalize_for_match(it->second);
  }
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (std::regex_search(steps[i], mention)) return i;
    if (!option_text.empty()) {
      const std::string padded = " " + text::normalize_for_match(steps[i]) + " ";
      if (padded.find(" " + option_text + " ") != std::string::npos) return i;
    }
  }
  return steps.size() - 1;
}

Rg1Result rg1_generate_pinpoint(const QARecord& record, const Rg1Params& params,
                                const llm::Gateway& gateway, const PromptCatalog& prompts) {
  if (record.source != Source::multichoice) {
    throw Error(ErrorCode::InvalidArgument, "RG1 needs a multichoice record: " + record.id);
  }
  if (params.k < 1) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  const auto letters = record.option_letters();
  const std::string prompt = prompts.render(
      PromptId::rg1_sample, {{"question", record.question}, {"options", format_options(record)}});
  llm::GenerationParams gp;
  gp.temperature = params.temperature;
  gp.max_tokens = params.max_tokens;
  std::vector<llm::ChatRequest> requests;
  for (int i = 0; i < params.k; ++i) {
    requests.push_back(llm::ChatRequest::user(
        prompt, gp, make_tag(task::rg1_sample, record.id, static_cast<std::size_t>(i))));
  }
  const auto responses = gateway.complete_many(requests);

  Rg1Result out;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const auto& resp = responses[i];
    const Exchange ex = make_exchange(requests[i], resp);
    out.transcript.push_back(ex);
    if (!resp.ok()) throw Error(*resp.error, resp.error_message);
    ++out.samples;

    std::string decision;
    try {
      decision = extract_decision(resp.content, letters);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoDecisionFound) throw;
      ++out.unparsed;
      continue;
    }
    if (decision == record.gold) {
      ++out.correct;
      continue;
    }

    const auto sentences = text::split_sentences(resp.content);
    const std::size_t d =
        decision_sentence(sentences, letters).value_or(sentences.empty() ? 0 : sentences.size() - 1);
    std::vector<std::string> steps(sentences.begin(),
                                   sentences.begin() + static_cast<std::ptrdiff_t>(d));
    if (steps.empty()) {
      ++out.unusable;
      continue;
    }
    const std::size_t idx = locate_wrong_option_sentence(steps, record, decision);

    Pinpoint p;
    p.id = record.id + "#RG1-" + std::to_string(out.pinpoints.size());
    p.record_id = record.id;
    p.pathway = Pathway::rg1;
    p.step_index = idx;
    p.erroneous_text = steps[idx];
    p.original_text = steps[idx];
    p.trajectory = Trajectory::from_sentences(record.id, steps, sentences[d]);
    p.trajectory.steps[idx].kind = StepKind::erroneous;
    p.rg1 = Rg1Detail{resp.content, decision};
    p.transcript.push_back(ex);
    out.pinpoints.push_back(std::move(p));
    if (params.policy == Rg1Policy::first) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// RG2

std::string mask_entity(std::string_view sentence, std::string_view surface, EntityType type) {
  if (surface.empty()) throw Error(ErrorCode::EntityNotInSentence, "empty entity");
  std::string out(sentence);
  if (!text::replace_first(out, surface, placeholder_for(type))) {
    throw Error(ErrorCode::EntityNotInSentence,
                "\"" + std::string(surface) + "\" not in \"" + std::string(sentence) + "\"");
  }
  return out;
}

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Offset of the first occurrence of `surface` when it stands as whole words.
std::optional<std::size_t> anchored_offset(std::string_view sentence, std::string_view surface) {
  const auto pos = sentence.find(surface);
  if (pos == std::string_view::npos) return std::nullopt;
  const std::size_t end = pos + surface.size();
  if (pos > 0 && is_word_char(sentence[pos - 1]) && is_word_char(surface.front())) return std::nullopt;
  if (end < sentence.size() && is_word_char(sentence[end]) && is_word_char(surface.back())) {
    return std::nullopt;
  }
  return pos;
}

}  // namespace

std::vector<ExtractedEntity> parse_entities(std::string_view reply,
                                            const std::vector<std::string>& steps) {
  const auto open = reply.find('[');
  const auto close = reply.rfind(']');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
    throw Error(ErrorCode::MalformedGeneration, "entity reply has no JSON array");
  }
  json doc;
  try {
    doc = json::parse(reply.substr(open, close - open + 1));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedGeneration, std::string("entity reply: ") + e.what());
  }
  if (!doc.is_array()) throw Error(ErrorCode::MalformedGeneration, "entity reply is not an array");

  std::vector<ExtractedEntity> out;
  for (const auto& item : doc) {
    if (!item.is_object()) continue;
    std::string surface;
    for (const char* key : {"entity", "surface", "text", "name"}) {
      if (item.contains(key) && item[key].is_string()) {
        surface = text::collapse_whitespace(item[key].get<std::string>());
        break;
      }
    }
    if (surface.empty() || surface.find('[') != std::string::npos) continue;
    const EntityType type =
        parse_entity_type(item.contains("type") && item["type"].is_string()
                              ? item["type"].get<std::string>()
                              : std::string("other"));
    for (std::size_t s = 0; s < steps.size(); ++s) {
      auto off = anchored_offset(steps[s], surface);
      std::string actual = surface;
      if (!off) {
        // Case-insensitive fallback; keep the sentence's own spelling.
        const std::string lower_sentence = text::to_lower(steps[s]);
        const auto pos = lower_sentence.find(text::to_lower(surface));
        if (pos != std::string::npos) {
          actual = steps[s].substr(pos, surface.size());
          off = anchored_offset(steps[s], actual);
        }
      }
      if (!off) continue;
      const bool dup = std::any_of(out.begin(), out.end(), [&](const ExtractedEntity& e) {
        return e.sentence_index == s && e.offset == *off;
      });
      if (!dup) out.push_back({actual, type, s, *off});
      break;
    }
  }
  std::sort(out.begin(), out.end(), [](const ExtractedEntity& a, const ExtractedEntity& b) {
    return std::tie(a.sentence_index, a.offset) < std::tie(b.sentence_index, b.offset);
  });
  return out;
}

Trajectory consultation_trajectory(const QARecord& record) {
  auto sentences = text::split_sentences(record.reasoning);
  if (sentences.size() < 2) {
    throw Error(ErrorCode::InvalidArgument,
                "record " + record.id + " needs at least two reasoning sentences");
  }
  std::string answer = sentences.back();
  sentences.pop_back();
  return Trajectory::from_sentences(record.id, sentences, std::move(answer));
}

Rg2Result rg2_generate_pinpoints(const QARecord& record, const Rg2Params& params,
                                 const llm::Gateway& gateway, const PromptCatalog& prompts) {
  if (record.source != Source::consultation) {
    throw Error(ErrorCode::InvalidArgument, "RG2 needs a consultation record: " + record.id);
  }
  if (params.m < 1) throw Error(ErrorCode::InvalidArgument, "m must be at least 1");
  if (!(params.error_threshold > 0.0 && params.error_threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "error_threshold must lie in (0, 1]");
  }

  Rg2Result out;
  Trajectory base;
  try {
    base = consultation_trajectory(record);
  } catch (const Error&) {
    out.skipped = ErrorCode::NoEntitiesFound;
    return out;
  }
  const auto steps = base.step_texts();

  llm::GenerationParams judge_params;
  judge_params.temperature = params.judge_temperature;
  judge_params.max_tokens = 512;
  const auto extract_req = llm::ChatRequest::user(
      prompts.render(PromptId::entity_extract, {{"reasoning", record.reasoning}}), judge_params,
      make_tag(task::entity_extract, record.id, 0));
  const auto extract_resp = gateway.complete(extract_req);
  const Exchange extract_ex = make_exchange(extract_req, extract_resp);
  out.transcript.push_back(extract_ex);

  std::vector<ExtractedEntity> entities;
  try {
    entities = parse_entities(extract_resp.content, steps);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::MalformedGeneration) throw;
    out.skipped = ErrorCode::MalformedGeneration;
    return out;
  }
  if (entities.empty()) {
    out.skipped = ErrorCode::NoEntitiesFound;
    return out;
  }

  // All probes for all entities go out as one batch; results are read back
  // by position, so completion order never matters.
  llm::GenerationParams probe_params;
  probe_params.temperature = params.probe_temperature;
  probe_params.max_tokens = 32;
  const std::string context =
      params.include_question ? "Patient question: " + record.question + "\n" : std::string();
  std::vector<std::string> masked(entities.size());
  std::vector<llm::ChatRequest> probes;
  for (std::size_t e = 0; e < entities.size(); ++e) {
    const auto& ent = entities[e];
    masked[e] = mask_entity(steps[ent.sentence_index], ent.surface, ent.type);
    const std::string prompt = prompts.render(
        PromptId::mask_fill, {{"placeholder", placeholder_for(ent.type)},
                              {"entity_type", std::string(to_string(ent.type))},
                              {"context", context},
                              {"masked_sentence", masked[e]}});
    const std::string key = record.id + "#e" + std::to_string(e);
    for (int t = 0; t < params.m; ++t) {
      probes.push_back(llm::ChatRequest::user(prompt, probe_params,
                                              make_tag(task::mask_fill, key, static_cast<std::size_t>(t))));
    }
  }
  const auto probe_resps = gateway.complete_many(probes);

  const std::size_t m = static_cast<std::size_t>(params.m);
  std::vector<EntityReport> reports(entities.size());
  std::vector<std::vector<Exchange>> entity_log(entities.size());
  std::vector<llm::ChatRequest> judges;
  std::vector<std::pair<std::size_t, std::size_t>> judge_slot;  // (entity, trial)
  for (std::size_t e = 0; e < entities.size(); ++e) {
    reports[e].entity = entities[e];
    reports[e].probes.resize(m);
    for (std::size_t t = 0; t < m; ++t) {
      const auto& resp = probe_resps[e * m + t];
      entity_log[e].push_back(make_exchange(probes[e * m + t], resp));
      auto& outcome = reports[e].probes[t];
      if (!resp.ok()) {
        outcome.failed = true;
        continue;
      }
      std::string fill = resp.content;
      if (auto nl = fill.find('\n'); nl != std::string::npos) fill.resize(nl);
      outcome.fill = text::clean_phrase(fill);
      const std::string norm = text::normalize_for_match(outcome.fill);
      if (norm.empty()) continue;
      if (norm == text::normalize_for_match(entities[e].surface)) {
        outcome.correct = true;
        continue;
      }
      outcome.judged = true;
      judges.push_back(llm::ChatRequest::user(
          prompts.render(PromptId::equivalence_judge, {{"sentence", masked[e]},
                                                       {"expected", entities[e].surface},
                                                       {"candidate", outcome.fill}}),
          judge_params,
          make_tag(task::judge, record.id + "#e" + std::to_string(e), t)));
      judge_slot.emplace_back(e, t);
    }
  }
  if (!judges.empty()) {
    const auto verdicts = gateway.complete_many(judges);
    for (std::size_t j = 0; j < judges.size(); ++j) {
      const auto [e, t] = judge_slot[j];
      entity_log[e].push_back(make_exchange(judges[j], verdicts[j]));
      auto& outcome = reports[e].probes[t];
      if (!verdicts[j].ok()) {
        outcome.failed = true;
        continue;
      }
      outcome.correct = parse_yes_no(verdicts[j].content).value_or(false);
    }
  }

  for (auto& rep : reports) {
    std::size_t valid = 0, wrong = 0;
    std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // norm -> (count, first trial)
    for (std::size_t t = 0; t < rep.probes.size(); ++t) {
      const auto& p = rep.probes[t];
      if (p.failed) continue;
      ++valid;
      if (p.correct) continue;
      ++wrong;
      const std::string norm = text::normalize_for_match(p.fill);
      if (norm.empty() || SpecialTokens{}.find_in(p.fill)) continue;
      auto [it, inserted] = tally.try_emplace(norm, 0, t);
      ++it->second.first;
    }
    rep.error_rate = valid == 0 ? 0.0 : static_cast<double>(wrong) / static_cast<double>(valid);
    std::size_t best_count = 0, best_trial = 0;
    for (const auto& [norm, ct] : tally) {
      if (ct.first > best_count || (ct.first == best_count && ct.second < best_trial)) {
        best_count = ct.first;
        best_trial = ct.second;
      }
    }
    if (best_count > 0) rep.wrong_fill = rep.probes[best_trial].fill;
    rep.qualifies = valid > 0 && !rep.wrong_fill.empty() &&
                    rep.error_rate >= params.error_threshold;
  }

  std::vector<std::size_t> order;
  for (std::size_t e = 0; e < reports.size(); ++e) {
    if (reports[e].qualifies) order.push_back(e);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ea = reports[a];
    const auto& eb = reports[b];
    if (ea.error_rate != eb.error_rate) return ea.error_rate > eb.error_rate;
    return std::tie(ea.entity.sentence_index, ea.entity.offset) <
           std::tie(eb.entity.sentence_index, eb.entity.offset);
  });

  std::vector<bool> sentence_taken(steps.size(), false);
  for (std::size_t e : order) {
    if (out.pinpoints.size() >= params.max_pinpoints) break;
    const auto& rep = reports[e];
    const std::size_t s = rep.entity.sentence_index;
    // Each triple replaces a whole step, so one pinpoint per sentence.
    if (sentence_taken[s]) continue;
    sentence_taken[s] = true;

    Pinpoint p;
    p.id = record.id + "#RG2-" + std::to_string(out.pinpoints.size());
    p.record_id = record.id;
    p.pathway = Pathway::rg2;
    p.step_index = s;
    p.original_text = steps[s];
    p.erroneous_text = steps[s];
    text::replace_first(p.erroneous_text, rep.entity.surface, rep.wrong_fill);
    p.trajectory = base;
    p.trajectory.steps[s].text = p.erroneous_text;
    p.trajectory.steps[s].kind = StepKind::erroneous;
    p.rg2 = MaskedEntity{rep.entity.surface, rep.entity.type, rep.wrong_fill, rep.error_rate};
    p.transcript.push_back(extract_ex);
    p.transcript.insert(p.transcript.end(), entity_log[e].begin(), entity_log[e].end());
    out.pinpoints.push_back(std::move(p));
  }

  for (auto& log : entity_log) out.transcript.insert(out.transcript.end(), log.begin(), log.end());
  out.entities = std::move(reports);
  return out;
}

}  // namespace reflectforge
