#include <set>

#include "reflectforge/error.hpp"
#include "reflectforge/pipeline.hpp"

namespace reflectforge::pipeline {

namespace {

using json = io::ordered_json;

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::ConfigError, path + ": " + what);
}

// Reads one object, remembering which keys were used so leftovers can be
// reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) bad(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    const json* v = raw(key);
    if (!v) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v->is_boolean()) bad(field(key), "expected true or false");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v->is_number_integer()) bad(field(key), "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v->get<std::int64_t>() < 0) bad(field(key), "must not be negative");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v->is_number()) bad(field(key), "expected a number");
    } else {
      if (!v->is_string()) bad(field(key), "expected a string");
    }
    out = v->get<T>();
  }

  std::optional<Section> child(const std::string& key) {
    const json* v = raw(key);
    if (!v) return std::nullopt;
    return Section(*v, field(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) bad(field(it.key()), "unknown setting");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_path(Section& s, const std::string& key, const std::filesystem::path& base,
               std::filesystem::path& out) {
  std::string v;
  s.get(key, v);
  if (v.empty()) return;
  std::filesystem::path p(v);
  out = p.is_absolute() ? p : base / p;
}

template <typename Enum, typename Parse>
void read_enum(Section& s, const std::string& key, Enum& out, Parse parse,
               const std::string& allowed) {
  std::string v;
  s.get(key, v);
  if (v.empty()) return;
  auto e = parse(v);
  if (!e) bad(s.field(key), "expected one of " + allowed + ", got \"" + v + "\"");
  out = *e;
}

BackendSection read_backend(Section s) {
  BackendSection b;
  auto& c = b.backend;
  std::string kind = "mock";
  s.get("kind", kind);
  if (kind == "mock") {
    c.kind = llm::BackendKind::mock;
  } else if (kind == "http") {
    c.kind = llm::BackendKind::http;
  } else {
    bad(s.field("kind"), "expected \"mock\" or \"http\", got \"" + kind + "\"");
  }
  s.get("base_url", c.base_url);
  s.get("model", c.model_name);
  s.get("api_key_env", c.api_key_env);
  if (s.raw("api_key")) {
    bad(s.field("api_key"), "keys are read from the environment; set api_key_env instead");
  }
  s.get("max_in_flight", c.max_in_flight);
  s.get("timeout_ms", c.timeout_ms);
  if (auto r = s.child("retry")) {
    r->get("max_attempts", c.retry.max_attempts);
    r->get("base_backoff_ms", c.retry.base_backoff_ms);
    r->finish();
  }
  if (auto m = s.child("simulated")) {
    auto& o = b.simulated;
    m->get("sample_accuracy", o.sample_accuracy);
    m->get("fill_accuracy_easy", o.fill_accuracy_easy);
    m->get("fill_accuracy_hard", o.fill_accuracy_hard);
    m->get("filter_success", o.filter_success);
    m->get("eval_accuracy", o.eval_accuracy);
    m->get("eval_reflect_rate", o.eval_reflect_rate);
    m->finish();
  }
  s.finish();
  try {
    c.check();
  } catch (const Error& e) {
    bad(s.field("max_in_flight"), e.what());
  }
  return b;
}

template <typename T>
void require(bool ok, const Section& s, const std::string& key, const std::string& what) {
  if (!ok) bad(s.field(key), what);
}

json backend_echo(const BackendSection& b) {
  const auto& c = b.backend;
  json j = {{"kind", c.kind == llm::BackendKind::mock ? "mock" : "http"},
            {"max_in_flight", c.max_in_flight},
            {"retry", {{"max_attempts", c.retry.max_attempts},
                       {"base_backoff_ms", c.retry.base_backoff_ms}}}};
  if (c.kind == llm::BackendKind::http) {
    j["base_url"] = c.base_url;
    j["model"] = c.model_name;
    j["api_key_env"] = c.api_key_env;
    j["timeout_ms"] = c.timeout_ms;
  } else {
    const auto& o = b.simulated;
    j["simulated"] = {{"sample_accuracy", o.sample_accuracy},
                      {"fill_accuracy_easy", o.fill_accuracy_easy},
                      {"fill_accuracy_hard", o.fill_accuracy_hard},
                      {"filter_success", o.filter_success},
                      {"eval_accuracy", o.eval_accuracy},
                      {"eval_reflect_rate", o.eval_reflect_rate}};
  }
  return j;
}

}  // namespace

std::string_view to_string(Stage s) noexcept {
  switch (s) {
    case Stage::ingest: return "ingest";
    case Stage::pinpoint: return "pinpoint";
    case Stage::reflect: return "reflect";
    case Stage::filter: return "filter";
    case Stage::emit: return "emit";
    case Stage::stats: return "stats";
    case Stage::eval: return "eval";
  }
  return "";
}

std::optional<Stage> parse_stage(std::string_view s) {
  for (auto st : kAllStages) {
    if (to_string(st) == s) return st;
  }
  return std::nullopt;
}

json parse_config_text(std::string_view text, const std::string& origin) {
  try {
    return json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, origin + ": " + e.what());
  }
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, "--config: " + std::string(e.what()));
  }
  return config_from_json(parse_config_text(text, path.string()), path.parent_path());
}

PipelineConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  PipelineConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  c.workdir = base_dir / c.workdir;
  read_path(root, "workdir", base_dir, c.workdir);
  read_path(root, "prompts", base_dir, c.prompts);
  root.get("checkpoint_every", c.checkpoint_every);
  if (c.checkpoint_every == 0) bad("checkpoint_every", "must be at least 1");

  if (auto in = root.child("inputs")) {
    read_path(*in, "consultations", base_dir, c.consultations);
    read_path(*in, "multichoice", base_dir, c.multichoice);
    if (auto cs = in->child("consultation_fields")) {
      cs->get("question", c.consultation_schema.question_field);
      cs->get("fallback_question", c.consultation_schema.fallback_question_field);
      cs->get("response", c.consultation_schema.response_field);
      cs->finish();
    }
    in->get("cop_base", c.multichoice_schema.cop_base);
    if (c.multichoice_schema.cop_base != 0 && c.multichoice_schema.cop_base != 1) {
      bad(in->field("cop_base"), "must be 0 or 1");
    }
    in->finish();
  }

  if (auto b = root.child("backend")) c.backend = read_backend(*b);
  if (auto b = root.child("filter_backend")) c.filter_backend = read_backend(*b);
  if (auto b = root.child("eval_backend")) c.eval_backend = read_backend(*b);

  if (auto p = root.child("preprocess")) {
    p->get("min_sentences", c.preprocess.min_sentences);
    p->get("min_chars", c.preprocess.min_chars);
    p->get("length_filter_multichoice", c.preprocess.length_filter_multichoice);
    read_enum(*p, "relevance", c.preprocess.relevance, parse_relevance_check,
              "none, heuristic, llm");
    p->finish();
  }

  if (auto r = root.child("rg1")) {
    r->get("k", c.rg1.k);
    require<int>(c.rg1.k >= 1, *r, "k", "must be at least 1");
    read_enum(*r, "policy", c.rg1.policy, parse_rg1_policy, "first, all");
    r->get("temperature", c.rg1.temperature);
    r->get("max_tokens", c.rg1.max_tokens);
    r->finish();
  }

  if (auto r = root.child("rg2")) {
    r->get("m", c.rg2.m);
    require<int>(c.rg2.m >= 1, *r, "m", "must be at least 1");
    r->get("error_threshold", c.rg2.error_threshold);
    require<int>(c.rg2.error_threshold > 0 && c.rg2.error_threshold <= 1, *r, "error_threshold",
                 "must lie in (0, 1]");
    r->get("max_pinpoints", c.rg2.max_pinpoints);
    r->get("include_question", c.rg2.include_question);
    r->get("probe_temperature", c.rg2.probe_temperature);
    r->get("judge_temperature", c.rg2.judge_temperature);
    r->finish();
  }

  if (auto r = root.child("reflection")) {
    r->get("temperature", c.reflection.temperature);
    r->get("max_tokens", c.reflection.max_tokens);
    r->get("regenerations", c.reflection.regenerations);
    require<int>(c.reflection.regenerations >= 0, *r, "regenerations", "must not be negative");
    r->get("full_context", c.reflection.full_context);
    r->get("leakage_min_length", c.reflection.leakage_min_length);
    r->finish();
  }

  if (auto f = root.child("filter")) {
    f->get("trials", c.filter.trials);
    f->get("retain_threshold", c.filter.retain_threshold);
    f->get("temperature", c.filter.temperature);
    f->get("max_tokens", c.filter.max_tokens);
    f->get("judge_temperature", c.filter.judge_temperature);
    try {
      check(c.filter);
    } catch (const Error& e) {
      bad(f->field("retain_threshold"), e.what());
    }
    f->finish();
  }

  if (auto e = root.child("emit")) {
    if (const json* modes = e->raw("modes")) {
      if (!modes->is_array() || modes->empty()) bad(e->field("modes"), "expected a non-empty list");
      c.modes.clear();
      for (const auto& m : *modes) {
        auto mode = m.is_string() ? parse_ablation_mode(m.get<std::string>()) : std::nullopt;
        if (!mode) {
          bad(e->field("modes"), "unknown mode " + m.dump() +
                                     "; expected full, no_reflect, question_only, answer_only, original");
        }
        if (std::find(c.modes.begin(), c.modes.end(), *mode) == c.modes.end()) c.modes.push_back(*mode);
      }
    }
    e->get("strict", c.strict_emit);
    if (auto t = e->child("tokens")) {
      t->get("think_open", c.tokens.think_open);
      t->get("think_close", c.tokens.think_close);
      t->get("modified_open", c.tokens.modified_open);
      t->get("modified_close", c.tokens.modified_close);
      try {
        c.tokens.check();
      } catch (const Error& err) {
        bad(e->field("tokens"), err.what());
      }
      t->finish();
    }
    e->finish();
  }

  c.eval.tokens = c.tokens;
  if (auto e = root.child("eval")) {
    e->get("benchmark", c.eval.benchmark);
    read_path(*e, "dataset", base_dir, c.eval.dataset);
    e->get("cop_base", c.eval.schema.cop_base);
    e->get("repeats", c.eval.repeats);
    require<int>(c.eval.repeats >= 1, *e, "repeats", "must be at least 1");
    e->get("temperature", c.eval.params.temperature);
    e->get("max_tokens", c.eval.params.max_tokens);
    read_enum(*e, "choice", c.eval.choice, parse_choice_policy, "letters, letters_then_text");
    read_enum(*e, "unparsed", c.eval.unparsed, parse_unparsed_policy, "incorrect, exclude");
    e->get("csv", c.eval_csv);
    e->finish();
  }
  root.finish();
  return c;
}

void validate(const PipelineConfig& c, const std::vector<Stage>& stages) {
  auto has = [&](Stage s) { return std::find(stages.begin(), stages.end(), s) != stages.end(); };
  if (has(Stage::ingest)) {
    if (c.consultations.empty() && c.multichoice.empty()) {
      bad("inputs", "set inputs.consultations or inputs.multichoice");
    }
    if (!c.consultations.empty() && !std::filesystem::is_regular_file(c.consultations)) {
      bad("inputs.consultations", "file not found: " + c.consultations.string());
    }
    if (!c.multichoice.empty() && !std::filesystem::is_regular_file(c.multichoice)) {
      bad("inputs.multichoice", "file not found: " + c.multichoice.string());
    }
  }
  if (has(Stage::eval)) {
    if (c.eval.dataset.empty()) bad("eval.dataset", "no benchmark dataset configured");
    if (!std::filesystem::is_regular_file(c.eval.dataset)) {
      bad("eval.dataset", "file not found: " + c.eval.dataset.string());
    }
  }
  if (!c.prompts.empty() && !std::filesystem::is_directory(c.prompts)) {
    bad("prompts", "not a directory: " + c.prompts.string());
  }
}

json PipelineConfig::echo() const {
  auto modes_json = json::array();
  for (auto m : modes) modes_json.push_back(reflectforge::to_string(m));
  auto file_name = [](const std::filesystem::path& p) {
    return p.empty() ? json(nullptr) : json(p.filename().string());
  };
  json j = {
      {"seed", seed},
      {"inputs", {{"consultations", file_name(consultations)},
                  {"multichoice", file_name(multichoice)},
                  {"consultation_fields", {{"question", consultation_schema.question_field},
                                           {"fallback_question", consultation_schema.fallback_question_field},
                                           {"response", consultation_schema.response_field}}},
                  {"cop_base", multichoice_schema.cop_base}}},
      {"prompts", prompts.empty() ? json("built-in") : json(prompts.filename().string())},
      {"backend", backend_echo(backend)},
      {"filter_backend", filter_backend ? backend_echo(*filter_backend) : json("backend")},
      {"eval_backend", eval_backend ? backend_echo(*eval_backend) : json("backend")},
      {"preprocess", {{"min_sentences", preprocess.min_sentences},
                      {"min_chars", preprocess.min_chars},
                      {"length_filter_multichoice", preprocess.length_filter_multichoice},
                      {"relevance", reflectforge::to_string(preprocess.relevance)}}},
      {"rg1", {{"k", rg1.k},
               {"policy", reflectforge::to_string(rg1.policy)},
               {"temperature", rg1.temperature},
               {"max_tokens", rg1.max_tokens}}},
      {"rg2", {{"m", rg2.m},
               {"error_threshold", rg2.error_threshold},
               {"max_pinpoints", rg2.max_pinpoints},
               {"include_question", rg2.include_question},
               {"probe_temperature", rg2.probe_temperature},
               {"judge_temperature", rg2.judge_temperature}}},
      {"reflection", {{"temperature", reflection.temperature},
                      {"max_tokens", reflection.max_tokens},
                      {"regenerations", reflection.regenerations},
                      {"full_context", reflection.full_context},
                      {"leakage_min_length", reflection.leakage_min_length}}},
      {"filter", {{"trials", filter.trials},
                  {"retain_threshold", filter.retain_threshold},
                  {"temperature", filter.temperature},
                  {"max_tokens", filter.max_tokens},
                  {"judge_temperature", filter.judge_temperature}}},
      {"emit", {{"modes", std::move(modes_json)},
                {"strict", strict_emit},
                {"tokens", {{"think_open", tokens.think_open},
                            {"think_close", tokens.think_close},
                            {"modified_open", tokens.modified_open},
                            {"modified_close", tokens.modified_close}}}}},
      {"eval", {{"benchmark", eval.benchmark},
                {"dataset", file_name(eval.dataset)},
                {"repeats", eval.repeats},
                {"temperature", eval.params.temperature},
                {"max_tokens", eval.params.max_tokens},
                {"choice", reflectforge::to_string(eval.choice)},
                {"unparsed", reflectforge::to_string(eval.unparsed)}}},
      {"checkpoint_every", checkpoint_every},
  };
  return j;
}

}  // namespace reflectforge::pipeline
