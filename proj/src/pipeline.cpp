#include "reflectforge/pipeline.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include "reflectforge/error.hpp"
#include "reflectforge/parallel.hpp"

namespace reflectforge::pipeline {

namespace {

using json = io::ordered_json;

struct Ctx {
  const PipelineConfig& config;
  const RunOptions& options;
  Artifacts art;
  PromptCatalog prompts;
  std::size_t checkpoints = 0;

  void log(Stage s, const std::string& msg) const {
    if (options.log) *options.log << "[" << to_string(s) << "] " << msg << "\n" << std::flush;
  }
};

std::vector<json> read_rows(const std::filesystem::path& path, Stage needed_by) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::FileNotFound,
                "missing " + path.string() + "; run the stage that produces it before " +
                    std::string(to_string(needed_by)));
  }
  std::vector<json> out;
  for (auto& row : io::read_jsonl(path)) out.push_back(std::move(row.value));
  return out;
}

std::vector<QARecord> load_records(const Ctx& ctx, Stage s) {
  std::vector<QARecord> out;
  for (const auto& j : read_rows(ctx.art.records(), s)) out.push_back(record_from_json(j));
  return out;
}

std::vector<ReflectionDraft> load_drafts(const Ctx& ctx, Stage s) {
  std::vector<ReflectionDraft> out;
  for (const auto& j : read_rows(ctx.art.drafts(), s)) out.push_back(draft_from_json(j));
  return out;
}

// Raised for failures that must stop the stage instead of being recorded
// against one item: a rejected key or a malformed request will fail every
// later call the same way.
void abort_on_fatal(ErrorCode code, const std::string& message) {
  if (is_gateway_error(code) && !is_retryable(code)) throw Error(code, message);
}

json error_json(const std::optional<ErrorCode>& code) {
  return code ? json(std::string(reflectforge::to_string(*code))) : json(nullptr);
}

// Processes `items` in chunks, appending each finished chunk to the stage's
// partial file. On resume, items already in the partial file are not redone.
// Rows come back in item order whatever was resumed.
template <typename Item, typename KeyFn, typename ProcessFn>
std::vector<json> run_chunks(Ctx& ctx, Stage stage, const std::vector<Item>& items, KeyFn key_of,
                             ProcessFn process) {
  const auto partial = ctx.art.partial(stage);
  std::unordered_map<std::string, json> done;
  if (ctx.options.resume && std::filesystem::exists(partial)) {
    // A kill mid-write can leave a torn last line; everything before it is
    // intact, so parse line by line and drop the tail.
    std::ifstream in(partial);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("key") || !j.contains("row")) break;
      done[j["key"].template get<std::string>()] = std::move(j["row"]);
    }
    ctx.log(stage, "resuming with " + std::to_string(done.size()) + " items from checkpoint");
  } else {
    std::filesystem::remove(partial);
  }

  std::vector<const Item*> pending;
  for (const auto& it : items) {
    if (!done.count(key_of(it))) pending.push_back(&it);
  }
  const std::size_t chunk = ctx.config.checkpoint_every;
  for (std::size_t start = 0; start < pending.size(); start += chunk) {
    std::vector<const Item*> batch(pending.begin() + start,
                                   pending.begin() + std::min(pending.size(), start + chunk));
    std::vector<json> rows = process(batch);
    std::string text;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      json line = {{"key", key_of(*batch[i])}, {"row", rows[i]}};
      text += line.dump() + "\n";
      done[key_of(*batch[i])] = std::move(rows[i]);
    }
    {
      std::ofstream out(partial, std::ios::app | std::ios::binary);
      out << text;
      out.flush();
      if (!out) throw Error(ErrorCode::WriteError, "cannot append to " + partial.string());
    }
    ++ctx.checkpoints;
    ctx.log(stage, std::to_string(done.size()) + "/" + std::to_string(items.size()) + " done");
    if (ctx.options.interrupt_after_checkpoints &&
        ctx.checkpoints >= *ctx.options.interrupt_after_checkpoints) {
      throw Error(ErrorCode::StageFailure, "interrupted after " + std::to_string(ctx.checkpoints) +
                                               " checkpoints");
    }
  }

  std::vector<json> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(std::move(done.at(key_of(it))));
  return out;
}

const BackendSection& filter_section(const PipelineConfig& c) {
  return c.filter_backend ? *c.filter_backend : c.backend;
}
const BackendSection& eval_section(const PipelineConfig& c) {
  return c.eval_backend ? *c.eval_backend : c.backend;
}

// ---------------------------------------------------------------------------

json stage_ingest(Ctx& ctx) {
  const auto& c = ctx.config;
  std::vector<QARecord> records;
  json inputs = json::object();
  if (!c.consultations.empty()) {
    auto r = load_consultations(c.consultations, c.consultation_schema);
    inputs["consultation"] = r.size();
    records.insert(records.end(), r.begin(), r.end());
  }
  if (!c.multichoice.empty()) {
    auto r = load_multichoice(c.multichoice, c.multichoice_schema);
    inputs["multichoice"] = r.size();
    records.insert(records.end(), r.begin(), r.end());
  }
  std::unordered_set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.id).second) {
      throw Error(ErrorCode::SchemaMismatch,
                  "duplicate record id " + r.id + "; the input files need distinct names");
    }
  }

  PreprocessResult pre;
  if (c.preprocess.relevance == RelevanceCheck::llm) {
    auto gw = make_gateway(c.backend, c.seed, records);
    pre = preprocess(std::move(records), c.preprocess, &gw, &ctx.prompts);
  } else {
    pre = preprocess(std::move(records), c.preprocess);
  }

  std::vector<json> rows;
  std::map<std::string, std::size_t> kept;
  for (const auto& r : pre.kept) {
    rows.push_back(to_json(r));
    ++kept[std::string(to_string(r.source))];
  }
  io::write_jsonl(ctx.art.records(), rows);
  ctx.log(Stage::ingest, std::to_string(pre.kept.size()) + " records kept");
  return {{"inputs", inputs}, {"preprocess", to_json(pre.report)}, {"kept_by_source", kept}};
}

json pinpoint_row(const QARecord& r, const PipelineConfig& c, const llm::Gateway& gw,
                  const PromptCatalog& prompts) {
  const bool rg1 = r.source == Source::multichoice;
  json row = {{"record_id", r.id}, {"pathway", rg1 ? "RG1" : "RG2"}};
  json pins = json::array();
  try {
    if (rg1) {
      auto res = rg1_generate_pinpoint(r, c.rg1, gw, prompts);
      for (const auto& p : res.pinpoints) pins.push_back(to_json(p));
      row["samples"] = res.samples;
      row["correct"] = res.correct;
      row["unparsed"] = res.unparsed;
      row["unusable"] = res.unusable;
    } else {
      auto res = rg2_generate_pinpoints(r, c.rg2, gw, prompts);
      for (const auto& p : res.pinpoints) pins.push_back(to_json(p));
      std::size_t qualifying = 0;
      for (const auto& e : res.entities) qualifying += e.qualifies ? 1 : 0;
      row["entities"] = res.entities.size();
      row["qualifying"] = qualifying;
      row["skipped"] = error_json(res.skipped);
    }
  } catch (const Error& e) {
    abort_on_fatal(e.code(), "record " + r.id + ": " + e.what());
    row["error"] = to_string(e.code());
    row["message"] = e.what();
  }
  row["pinpoints"] = std::move(pins);
  return row;
}

json stage_pinpoint(Ctx& ctx) {
  const auto& c = ctx.config;
  const auto records = load_records(ctx, Stage::pinpoint);
  const auto gw = make_gateway(c.backend, c.seed, records);
  const std::size_t workers = static_cast<std::size_t>(c.backend.backend.max_in_flight);

  auto rows = run_chunks(
      ctx, Stage::pinpoint, records, [](const QARecord& r) { return r.id; },
      [&](const std::vector<const QARecord*>& batch) {
        std::vector<json> out(batch.size());
        parallel_for(batch.size(), workers,
                     [&](std::size_t i) { out[i] = pinpoint_row(*batch[i], c, gw, ctx.prompts); });
        return out;
      });

  std::vector<json> pins;
  json by = json::object();
  std::map<std::string, std::size_t> errors, skipped;
  std::map<std::size_t, std::size_t> per_record_rg2;
  for (const auto& row : rows) {
    const std::string pw = row["pathway"];
    auto& b = by[pw];
    if (b.is_null()) {
      b = {{"records", 0}, {"pinpoints", 0}};
      if (pw == "RG1") {
        b.update({{"samples", 0}, {"correct", 0}, {"unparsed", 0}, {"unusable", 0}});
      } else {
        b.update({{"entities", 0}, {"qualifying", 0}});
      }
    }
    b["records"] = b["records"].get<std::size_t>() + 1;
    b["pinpoints"] = b["pinpoints"].get<std::size_t>() + row["pinpoints"].size();
    for (const char* k : {"samples", "correct", "unparsed", "unusable", "entities", "qualifying"}) {
      if (row.contains(k)) b[k] = b[k].get<std::size_t>() + row[k].get<std::size_t>();
    }
    if (row.contains("error")) ++errors[row["error"].get<std::string>()];
    if (row.contains("skipped") && !row["skipped"].is_null()) {
      ++skipped[row["skipped"].get<std::string>()];
    }
    if (pw == "RG2" && !row.contains("error")) ++per_record_rg2[row["pinpoints"].size()];
    for (const auto& p : row["pinpoints"]) pins.push_back(p);
  }
  io::write_jsonl(ctx.art.pinpoints(), pins);
  std::filesystem::remove(ctx.art.partial(Stage::pinpoint));
  ctx.log(Stage::pinpoint, std::to_string(pins.size()) + " pinpoints");

  json dist = json::object();
  for (const auto& [n, k] : per_record_rg2) dist[std::to_string(n)] = k;
  return {{"records", rows.size()},      {"pinpoints", pins.size()},
          {"by_pathway", by},            {"rg2_pinpoints_per_record", dist},
          {"rg2_skipped", skipped},      {"errors", errors}};
}

json stage_reflect(Ctx& ctx) {
  const auto& c = ctx.config;
  const auto records = load_records(ctx, Stage::reflect);
  std::vector<Pinpoint> pins;
  for (const auto& j : read_rows(ctx.art.pinpoints(), Stage::reflect)) {
    pins.push_back(pinpoint_from_json(j));
  }
  const auto gw = make_gateway(c.backend, c.seed, records);

  auto rows = run_chunks(
      ctx, Stage::reflect, pins, [](const Pinpoint& p) { return p.id; },
      [&](const std::vector<const Pinpoint*>& batch) {
        std::vector<Pinpoint> chunk;
        for (const auto* p : batch) chunk.push_back(*p);
        auto outcomes = build_reflections(records, chunk, c.reflection, gw, ctx.prompts);
        std::vector<json> out;
        for (const auto& o : outcomes) {
          if (o.error) abort_on_fatal(*o.error, "pinpoint " + o.pinpoint_id + ": " + o.message);
          out.push_back({{"pinpoint_id", o.pinpoint_id},
                         {"draft", o.draft ? to_json(*o.draft) : json(nullptr)},
                         {"error", error_json(o.error)},
                         {"message", o.message}});
        }
        return out;
      });

  std::vector<json> drafts, failures;
  std::map<std::string, std::size_t> by_error;
  std::map<std::string, std::map<std::string, std::size_t>> by_pathway;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string pw(to_string(pins[i].pathway));
    if (!rows[i]["draft"].is_null()) {
      drafts.push_back(rows[i]["draft"]);
      ++by_pathway[pw]["drafts"];
    } else {
      const std::string code = rows[i]["error"];
      ++by_error[code];
      ++by_pathway[pw]["failures"];
      failures.push_back({{"pinpoint_id", pins[i].id},
                          {"record_id", pins[i].record_id},
                          {"pathway", pw},
                          {"error", code},
                          {"message", rows[i]["message"]}});
    }
  }
  io::write_jsonl(ctx.art.drafts(), drafts);
  io::write_jsonl(ctx.art.reflect_failures(), failures);
  std::filesystem::remove(ctx.art.partial(Stage::reflect));
  ctx.log(Stage::reflect, std::to_string(drafts.size()) + " drafts, " +
                              std::to_string(failures.size()) + " failures");
  return {{"pinpoints", pins.size()},
          {"drafts", drafts.size()},
          {"failures", failures.size()},
          {"by_pathway", by_pathway},
          {"failures_by_error", by_error}};
}

json stage_filter(Ctx& ctx) {
  const auto& c = ctx.config;
  const auto records = load_records(ctx, Stage::filter);
  const auto drafts = load_drafts(ctx, Stage::filter);
  const auto gw = make_gateway(filter_section(c), c.seed, records);

  auto rows = run_chunks(
      ctx, Stage::filter, drafts, [](const ReflectionDraft& d) { return d.id(); },
      [&](const std::vector<const ReflectionDraft*>& batch) {
        std::vector<ReflectionDraft> chunk;
        for (const auto* d : batch) chunk.push_back(*d);
        auto res = filter_dataset(chunk, records, c.filter, gw, ctx.prompts);
        std::vector<json> out;
        for (const auto& v : res.verdicts) out.push_back(to_json(v));
        return out;
      });

  std::vector<FilterVerdict> verdicts;
  for (const auto& r : rows) verdicts.push_back(verdict_from_json(r));
  io::write_jsonl(ctx.art.verdicts(), rows);
  std::filesystem::remove(ctx.art.partial(Stage::filter));
  const auto summary = summarize(verdicts);
  ctx.log(Stage::filter, std::to_string(summary.total.retained) + "/" +
                             std::to_string(summary.total.assessed) + " retained");
  if (summary.gateway_failures > 0) {
    ctx.log(Stage::filter, "warning: " + std::to_string(summary.gateway_failures) +
                               " trials failed at the gateway and were counted as failures");
  }
  return to_json(summary);
}

std::vector<AblationMode> selected_modes(const Ctx& ctx) {
  if (ctx.options.mode) return {*ctx.options.mode};
  return ctx.config.modes;
}

json stage_emit(Ctx& ctx) {
  const auto& c = ctx.config;
  const auto records = load_records(ctx, Stage::emit);
  const auto drafts = load_drafts(ctx, Stage::emit);
  std::unordered_set<std::string> keep;
  for (const auto& j : read_rows(ctx.art.verdicts(), Stage::emit)) {
    if (j.at("retained").get<bool>()) keep.insert(j.at("instance_id").get<std::string>());
  }
  std::vector<ReflectionDraft> retained;
  for (const auto& d : drafts) {
    if (keep.count(d.id())) retained.push_back(d);
  }

  json modes = json::object();
  for (auto m : selected_modes(ctx)) {
    EmitOptions opts{m, c.tokens, c.strict_emit};
    auto res = emit_training_file(retained, records, opts, ctx.art.training(m));
    json rejected = json::array();
    for (const auto& r : res.rejected) rejected.push_back({{"id", r.id}, {"reason", r.reason}});
    modes[std::string(to_string(m))] = {{"file", ctx.art.training(m).filename().string()},
                                        {"examples", res.examples.size()},
                                        {"rejected", std::move(rejected)}};
    ctx.log(Stage::emit, std::string(to_string(m)) + ": " + std::to_string(res.examples.size()) +
                             " examples");
  }
  emit_token_manifest(c.tokens, ctx.art.token_manifest());
  return {{"drafts_retained", retained.size()},
          {"tokens", ctx.art.token_manifest().filename().string()},
          {"modes", std::move(modes)}};
}

json stage_stats(Ctx& ctx) {
  json out = json::object();
  for (auto m : selected_modes(ctx)) {
    const auto file = ctx.art.training(m);
    if (!std::filesystem::exists(file)) {
      throw Error(ErrorCode::FileNotFound, "missing " + file.string() + "; run emit first");
    }
    out[std::string(to_string(m))] = to_json(compute_stats(file, ctx.config.tokens));
  }
  return out;
}

json stage_eval(Ctx& ctx) {
  const auto& c = ctx.config;
  std::vector<QARecord> items;
  try {
    items = load_multichoice(c.eval.dataset, c.eval.schema);
  } catch (const Error& e) {
    throw Error(ErrorCode::DatasetError, c.eval.dataset.string() + ": " + e.what());
  }
  const auto gw = make_gateway(eval_section(c), c.seed, items);
  auto result = evaluate_records(c.eval, std::move(items), gw, ctx.prompts);
  if (c.eval_csv) io::write_file(ctx.art.eval_csv(), items_csv(result));
  ctx.log(Stage::eval, "mean accuracy " + std::to_string(result.mean_accuracy));
  auto j = to_json(result);
  j.erase("config");
  return j;
}

json run_stage(Ctx& ctx, Stage s) {
  switch (s) {
    case Stage::ingest: return stage_ingest(ctx);
    case Stage::pinpoint: return stage_pinpoint(ctx);
    case Stage::reflect: return stage_reflect(ctx);
    case Stage::filter: return stage_filter(ctx);
    case Stage::emit: return stage_emit(ctx);
    case Stage::stats: return stage_stats(ctx);
    case Stage::eval: return stage_eval(ctx);
  }
  return {};
}

std::filesystem::path report_path(const Artifacts& a, Stage s) {
  switch (s) {
    case Stage::ingest: return a.ingest_report();
    case Stage::pinpoint: return a.pinpoint_report();
    case Stage::reflect: return a.reflect_report();
    case Stage::filter: return a.filter_report();
    case Stage::emit: return a.emit_report();
    case Stage::stats: return a.stats_report();
    case Stage::eval: return a.eval_report();
  }
  return {};
}

}  // namespace

std::filesystem::path Artifacts::marker(Stage s) const { return report_path(*this, s); }

llm::Gateway make_gateway(const BackendSection& section, std::uint64_t seed,
                          std::vector<QARecord> records) {
  if (section.backend.kind == llm::BackendKind::http) {
    return llm::Gateway(section.backend, llm::make_http_backend(section.backend));
  }
  llm::MockOptions opts;
  opts.seed = seed;
  opts.fallback = simulated_model(std::move(records), section.simulated);
  opts.keep_log = false;
  return llm::Gateway(section.backend,
                      std::make_shared<llm::MockBackend>(std::vector<llm::ScriptRule>{}, opts));
}

std::vector<Stage> default_stages(const PipelineConfig& config) {
  std::vector<Stage> s = {Stage::ingest, Stage::pinpoint, Stage::reflect,
                          Stage::filter, Stage::emit,     Stage::stats};
  if (!config.eval.dataset.empty()) s.push_back(Stage::eval);
  return s;
}

std::vector<StageOutcome> run(const PipelineConfig& config, const std::vector<Stage>& stages,
                              const RunOptions& options) {
  validate(config, stages);
  std::vector<StageOutcome> out;
  if (options.dry_run) {
    for (auto s : stages) out.push_back({s, true, {}});
    return out;
  }

  Ctx ctx{config, options, Artifacts{config.workdir},
          config.prompts.empty() ? PromptCatalog::defaults() : PromptCatalog::load(config.prompts)};
  std::error_code ec;
  std::filesystem::create_directories(config.workdir, ec);
  if (ec) {
    throw Error(ErrorCode::ConfigError,
                "workdir: cannot create " + config.workdir.string() + ": " + ec.message());
  }

  for (auto s : stages) {
    const auto marker = ctx.art.marker(s);
    if (options.resume && std::filesystem::exists(marker)) {
      ctx.log(s, "already complete, skipped");
      out.push_back({s, true, io::ordered_json::parse(io::read_file(marker))});
      continue;
    }
    // Anything downstream was built from the old output of this stage.
    bool later = false;
    for (auto t : kAllStages) {
      if (later) std::filesystem::remove(ctx.art.marker(t));
      if (t == s) later = true;
    }
    std::filesystem::remove(marker);

    json report = {{"stage", to_string(s)}};
    try {
      report["result"] = run_stage(ctx, s);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ConfigError) throw;
      std::string hint = s == Stage::pinpoint || s == Stage::reflect || s == Stage::filter
                             ? "; finished checkpoints are kept, rerun with --resume to continue"
                             : "; fix the cause and rerun the stage";
      throw Error(ErrorCode::StageFailure,
                  "stage " + std::string(to_string(s)) + " failed: " + e.what() + hint);
    }
    report["config"] = config.echo();
    io::write_json(marker, report);
    out.push_back({s, false, std::move(report)});
  }
  return out;
}

}  // namespace reflectforge::pipeline
