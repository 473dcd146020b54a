#include "reflectforge/filter.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>

#include "reflectforge/error.hpp"
#include "reflectforge/text.hpp"

namespace reflectforge {

std::string_view to_string(TrialOutcome o) noexcept {
  switch (o) {
    case TrialOutcome::success: return "success";
    case TrialOutcome::wrong: return "wrong";
    case TrialOutcome::unparsed: return "unparsed";
    case TrialOutcome::gateway_error: return "gateway_error";
    case TrialOutcome::judge_unavailable: return "judge_unavailable";
  }
  return "";
}

namespace {

TrialOutcome parse_outcome(std::string_view s) {
  for (auto o : {TrialOutcome::success, TrialOutcome::wrong, TrialOutcome::unparsed,
                 TrialOutcome::gateway_error, TrialOutcome::judge_unavailable}) {
    if (to_string(o) == s) return o;
  }
  throw Error(ErrorCode::ParseError, "unknown trial outcome: " + std::string(s));
}

std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in(text::normalize_for_match(s));
  for (std::string w; in >> w;) out.push_back(std::move(w));
  return out;
}

// Start of the first occurrence of `needle` in `hay`, word-wise.
std::optional<std::size_t> find_words(const std::vector<std::string>& hay,
                                      const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > hay.size()) return std::nullopt;
  auto it = std::search(hay.begin(), hay.end(), needle.begin(), needle.end());
  if (it == hay.end()) return std::nullopt;
  return static_cast<std::size_t>(it - hay.begin());
}

std::string first_line(std::string_view s) {
  const auto t = text::trim(s);
  return text::collapse_whitespace(std::string_view(t).substr(0, t.find('\n')));
}

struct Job {
  const ReflectionDraft* draft = nullptr;
  const QARecord* record = nullptr;
};

llm::ChatRequest trial_request(const Job& job, int t, const FilterParams& params,
                               const PromptCatalog& prompts) {
  const auto& d = *job.draft;
  llm::GenerationParams gp;
  gp.temperature = params.temperature;
  gp.max_tokens = params.max_tokens;
  if (d.pinpoint.pathway == Pathway::rg1) {
    return llm::ChatRequest::user(
        prompts.render(PromptId::filter_rg1,
                       {{"question", job.record->question},
                        {"options", format_options(*job.record)},
                        {"erroneous_trajectory", render_trajectory(d.pinpoint.trajectory)},
                        {"reflection_question", d.question},
                        {"reflection_answer", d.answer}}),
        gp, make_tag(task::filter_rg1, d.id(), static_cast<std::size_t>(t)));
  }
  return llm::ChatRequest::user(
      prompts.render(PromptId::filter_rg2, {{"question", job.record->question},
                                            {"erroneous_step", d.pinpoint.erroneous_text},
                                            {"reflection_question", d.question},
                                            {"reflection_answer", d.answer}}),
      gp, make_tag(task::filter_rg2, d.id(), static_cast<std::size_t>(t)));
}

std::vector<FilterVerdict> assess(const std::vector<Job>& jobs, const FilterParams& params,
                                  const llm::Gateway& gateway, const PromptCatalog& prompts) {
  check(params);
  const auto n_trials = static_cast<std::size_t>(params.trials);
  std::vector<llm::ChatRequest> requests;
  requests.reserve(jobs.size() * n_trials);
  for (const auto& job : jobs) {
    if (!job.draft->pinpoint.rg1 && !job.draft->pinpoint.rg2) {
      throw Error(ErrorCode::InvalidArgument, "draft " + job.draft->id() + " has no pathway detail");
    }
    for (int t = 0; t < params.trials; ++t) requests.push_back(trial_request(job, t, params, prompts));
  }
  const auto replies = gateway.complete_many(requests);

  std::vector<FilterVerdict> verdicts(jobs.size());
  std::vector<llm::ChatRequest> judges;
  std::vector<std::pair<std::size_t, std::size_t>> judge_slot;
  llm::GenerationParams jp;
  jp.temperature = params.judge_temperature;
  jp.max_tokens = 16;

  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto& d = *jobs[j].draft;
    const auto& rec = *jobs[j].record;
    auto& v = verdicts[j];
    v.instance_id = d.id();
    v.record_id = rec.id;
    v.pathway = d.pinpoint.pathway;
    v.source = rec.source;
    v.trials = params.trials;
    for (std::size_t t = 0; t < n_trials; ++t) {
      const auto& resp = replies[j * n_trials + t];
      Trial trial;
      trial.ordinal = static_cast<int>(t);
      trial.tag = resp.tag;
      trial.reply = resp.content;
      if (!resp.ok()) {
        trial.outcome = TrialOutcome::gateway_error;
        trial.reply = resp.error_message;
      } else if (d.pinpoint.pathway == Pathway::rg1) {
        try {
          trial.decision = extract_decision(resp.content, rec.option_letters());
          trial.outcome = trial.decision == rec.gold ? TrialOutcome::success : TrialOutcome::wrong;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::NoDecisionFound) throw;
          trial.outcome = TrialOutcome::unparsed;
        }
      } else {
        const auto& ent = *d.pinpoint.rg2;
        const auto revised = first_line(resp.content);
        const auto slot = entity_at_mask(d.pinpoint.original_text, ent.surface, revised);
        const auto surface = text::normalize_for_match(ent.surface);
        if (slot) {
          trial.decision = *slot;
          const auto got = text::normalize_for_match(*slot);
          if (got == surface) {
            trial.outcome = TrialOutcome::success;
          } else if (got.empty() || got == text::normalize_for_match(ent.wrong_fill)) {
            trial.outcome = TrialOutcome::wrong;
          } else {
            trial.judged = true;
            judge_slot.emplace_back(j, t);
            judges.push_back(llm::ChatRequest::user(
                prompts.render(PromptId::equivalence_judge, {{"sentence", d.pinpoint.original_text},
                                                             {"expected", ent.surface},
                                                             {"candidate", *slot}}),
                jp, make_tag(task::judge, d.id(), t)));
          }
        } else {
          // Context rephrased: accept only the original entity with the wrong
          // one gone.
          const auto rw = words(revised);
          const bool has_surface = find_words(rw, words(ent.surface)).has_value();
          const bool has_wrong = find_words(rw, words(ent.wrong_fill)).has_value();
          trial.outcome = has_surface && !has_wrong ? TrialOutcome::success : TrialOutcome::wrong;
          if (has_surface) trial.decision = ent.surface;
        }
      }
      v.per_trial.push_back(std::move(trial));
    }
  }

  const auto verdicts_of_judges = gateway.complete_many(judges);
  for (std::size_t k = 0; k < judges.size(); ++k) {
    auto& trial = verdicts[judge_slot[k].first].per_trial[judge_slot[k].second];
    const auto& resp = verdicts_of_judges[k];
    if (!resp.ok()) {
      trial.outcome = TrialOutcome::judge_unavailable;
      continue;
    }
    trial.outcome = parse_yes_no(resp.content).value_or(false) ? TrialOutcome::success
                                                               : TrialOutcome::wrong;
  }

  for (auto& v : verdicts) {
    v.successes = static_cast<int>(std::count_if(v.per_trial.begin(), v.per_trial.end(),
                                                 [](const Trial& t) { return t.ok(); }));
    v.retained = v.successes >= params.retain_threshold;
  }
  return verdicts;
}

}  // namespace

void check(const FilterParams& params) {
  if (params.trials < 1) throw Error(ErrorCode::InvalidArgument, "filter trials must be >= 1");
  if (params.retain_threshold < 1 || params.retain_threshold > params.trials) {
    throw Error(ErrorCode::InvalidArgument, "retain threshold must lie in [1, trials]");
  }
}

std::optional<std::string> entity_at_mask(std::string_view original, std::string_view surface,
                                          std::string_view revised) {
  const auto ow = words(original);
  const auto sw = words(surface);
  const auto rw = words(revised);
  const auto at = find_words(ow, sw);
  if (!at) return std::nullopt;
  const std::size_t before = *at;
  const std::size_t after = ow.size() - before - sw.size();
  if (rw.size() < before + after) return std::nullopt;
  if (!std::equal(ow.begin(), ow.begin() + static_cast<std::ptrdiff_t>(before), rw.begin())) {
    return std::nullopt;
  }
  if (!std::equal(ow.end() - static_cast<std::ptrdiff_t>(after), ow.end(),
                  rw.end() - static_cast<std::ptrdiff_t>(after))) {
    return std::nullopt;
  }
  std::vector<std::string> slot(rw.begin() + static_cast<std::ptrdiff_t>(before),
                                rw.end() - static_cast<std::ptrdiff_t>(after));
  return text::join(slot, " ");
}

FilterVerdict assess_instance(const ReflectionDraft& draft, const QARecord& record,
                              const FilterParams& params, const llm::Gateway& gateway,
                              const PromptCatalog& prompts) {
  if (draft.pinpoint.record_id != record.id) {
    throw Error(ErrorCode::InvalidArgument,
                "draft " + draft.id() + " does not belong to record " + record.id);
  }
  return assess({Job{&draft, &record}}, params, gateway, prompts).front();
}

FilterResult filter_dataset(const std::vector<ReflectionDraft>& drafts,
                            const std::vector<QARecord>& records, const FilterParams& params,
                            const llm::Gateway& gateway, const PromptCatalog& prompts) {
  std::unordered_map<std::string, const QARecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.id, &r);
  std::vector<Job> jobs;
  jobs.reserve(drafts.size());
  for (const auto& d : drafts) {
    auto it = by_id.find(d.pinpoint.record_id);
    if (it == by_id.end()) {
      throw Error(ErrorCode::InvalidArgument, "no record " + d.pinpoint.record_id + " for draft " + d.id());
    }
    jobs.push_back({&d, it->second});
  }

  FilterResult out;
  out.verdicts = assess(jobs, params, gateway, prompts);
  out.summary = summarize(out.verdicts);
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    if (out.verdicts[i].retained) out.retained.push_back(drafts[i]);
  }
  return out;
}

FilterSummary summarize(const std::vector<FilterVerdict>& verdicts) {
  FilterSummary s;
  for (const auto& v : verdicts) {
    for (auto* c : {&s.total, &s.by_pathway[std::string(to_string(v.pathway))],
                    &s.by_source[std::string(to_string(v.source))]}) {
      ++c->assessed;
      if (v.retained) ++c->retained;
    }
    for (const auto& t : v.per_trial) {
      if (t.outcome == TrialOutcome::gateway_error) ++s.gateway_failures;
      if (t.outcome == TrialOutcome::judge_unavailable) ++s.judge_unavailable;
    }
  }
  return s;
}

io::ordered_json to_json(const FilterVerdict& v) {
  io::ordered_json trials = io::ordered_json::array();
  for (const auto& t : v.per_trial) {
    trials.push_back({{"ordinal", t.ordinal},
                      {"outcome", to_string(t.outcome)},
                      {"decision", t.decision},
                      {"judged", t.judged},
                      {"tag", t.tag},
                      {"reply", t.reply}});
  }
  return {{"instance_id", v.instance_id}, {"record_id", v.record_id},
          {"pathway", to_string(v.pathway)}, {"source", to_string(v.source)},
          {"trials", v.trials},             {"successes", v.successes},
          {"retained", v.retained},         {"per_trial", std::move(trials)}};
}

FilterVerdict verdict_from_json(const io::ordered_json& j) {
  try {
    FilterVerdict v;
    v.instance_id = j.at("instance_id").get<std::string>();
    v.record_id = j.at("record_id").get<std::string>();
    auto p = parse_pathway(j.at("pathway").get<std::string>());
    auto s = parse_source(j.at("source").get<std::string>());
    if (!p || !s) throw Error(ErrorCode::ParseError, "bad pathway or source in verdict");
    v.pathway = *p;
    v.source = *s;
    v.trials = j.at("trials").get<int>();
    v.successes = j.at("successes").get<int>();
    v.retained = j.at("retained").get<bool>();
    for (const auto& t : j.at("per_trial")) {
      Trial trial;
      trial.ordinal = t.at("ordinal").get<int>();
      trial.outcome = parse_outcome(t.at("outcome").get<std::string>());
      trial.decision = t.at("decision").get<std::string>();
      trial.judged = t.at("judged").get<bool>();
      trial.tag = t.at("tag").get<std::string>();
      trial.reply = t.at("reply").get<std::string>();
      v.per_trial.push_back(std::move(trial));
    }
    return v;
  } catch (const io::ordered_json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("verdict: ") + e.what());
  }
}

io::ordered_json to_json(const FilterSummary& s) {
  auto counts = [](const FilterCounts& c) {
    return io::ordered_json{{"assessed", c.assessed}, {"retained", c.retained}, {"rate", c.rate()}};
  };
  io::ordered_json by_pathway = io::ordered_json::object();
  for (const auto& [k, c] : s.by_pathway) by_pathway[k] = counts(c);
  io::ordered_json by_source = io::ordered_json::object();
  for (const auto& [k, c] : s.by_source) by_source[k] = counts(c);
  return {{"total", counts(s.total)},
          {"by_pathway", std::move(by_pathway)},
          {"by_source", std::move(by_source)},
          {"gateway_failures", s.gateway_failures},
          {"judge_unavailable", s.judge_unavailable}};
}

}  // namespace reflectforge
