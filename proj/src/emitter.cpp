#include "reflectforge/emitter.hpp"

#include <algorithm>
#include <unordered_map>

#include "reflectforge/error.hpp"
#include "reflectforge/parallel.hpp"
#include "reflectforge/rng.hpp"
#include "reflectforge/text.hpp"

namespace reflectforge {

const std::string& TrainingExample::assistant() const {
  for (const auto& m : messages) {
    if (m.role == "assistant") return m.content;
  }
  throw Error(ErrorCode::DatasetError, "example " + id + " has no assistant message");
}

io::ordered_json to_json(const TrainingExample& e) {
  io::ordered_json messages = io::ordered_json::array();
  for (const auto& m : e.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  return {{"id", e.id},
          {"source", to_string(e.source)},
          {"mode", to_string(e.mode)},
          {"messages", std::move(messages)},
          {"meta", {{"pathway", e.pathway}, {"pinpoints", e.pinpoints}}}};
}

TrainingExample example_from_json(const io::ordered_json& j) {
  try {
    TrainingExample e;
    e.id = j.at("id").get<std::string>();
    const auto source = parse_source(j.at("source").get<std::string>());
    if (!source) throw Error(ErrorCode::ParseError, "unknown source in example " + e.id);
    e.source = *source;
    const auto mode = parse_ablation_mode(j.at("mode").get<std::string>());
    if (!mode) throw Error(ErrorCode::ParseError, "unknown mode in example " + e.id);
    e.mode = *mode;
    for (const auto& m : j.at("messages")) {
      e.messages.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
    }
    e.pathway = j.at("meta").at("pathway").get<std::string>();
    e.pinpoints = j.at("meta").at("pinpoints").get<std::size_t>();
    return e;
  } catch (const io::ordered_json::exception& ex) {
    throw Error(ErrorCode::ParseError, std::string("training example: ") + ex.what());
  }
}

std::vector<ReflectiveExample> group_drafts(const std::vector<ReflectionDraft>& drafts,
                                            const std::vector<QARecord>& records) {
  std::unordered_map<std::string, const QARecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.id, &r);
  auto record_of = [&](const ReflectionDraft& d) {
    auto it = by_id.find(d.pinpoint.record_id);
    if (it == by_id.end()) {
      throw Error(ErrorCode::DatasetError, "no record " + d.pinpoint.record_id + " for draft " + d.id());
    }
    return it->second;
  };

  std::map<std::string, std::vector<const ReflectionDraft*>> rg2;
  std::vector<ReflectiveExample> out;
  for (const auto& d : drafts) {
    const auto* rec = record_of(d);
    if (d.pinpoint.pathway == Pathway::rg2) {
      rg2[rec->id].push_back(&d);
      continue;
    }
    out.push_back({d.id(), rec, Pathway::rg1, assemble_drafts({&d}, *rec), 1});
  }
  for (const auto& [rid, group] : rg2) {
    const auto* rec = by_id.at(rid);
    out.push_back({rid + "#RG2", rec, Pathway::rg2, assemble_drafts(group, *rec), group.size()});
  }
  std::sort(out.begin(), out.end(), [](const ReflectiveExample& a, const ReflectiveExample& b) {
    if (a.record->id != b.record->id) return a.record->id < b.record->id;
    return a.id < b.id;
  });
  return out;
}

std::string user_content(const QARecord& record) {
  if (record.options.empty()) return record.question;
  return record.question + "\n\n" + format_options(record);
}

TrainingExample make_example(const ReflectiveExample& r, AblationMode mode,
                             const SpecialTokens& tokens) {
  TrainingExample e;
  e.id = r.id;
  e.source = r.record->source;
  e.mode = mode;
  e.pathway = std::string(to_string(r.pathway));
  e.pinpoints = r.pinpoints;
  e.messages.push_back({"user", user_content(*r.record)});
  e.messages.push_back(
      {"assistant", serialize_training_text(project_ablation(r.trajectory, mode), tokens)});
  return e;
}

std::optional<std::string> check_parse_back(const TrainingExample& e,
                                            const ReflectiveTrajectory& expected,
                                            const SpecialTokens& tokens) {
  const auto grammar = grammar_for(e.mode);
  const auto& text = e.assistant();
  try {
    const auto back = parse_training_text(text, tokens, grammar);
    if (grammar == Grammar::plain) {
      if (tokens.find_in(text)) return "special token in a plain-mode example";
      if (back.reflection_count() != 0) return "reflection in a plain-mode example";
      return std::nullopt;
    }
    if (!structurally_equal(back, project_ablation(expected, e.mode))) {
      return "parsed text differs from the assembled trajectory";
    }
    ValidateOptions vo;
    vo.grammar = grammar;
    vo.tokens = tokens;
    const auto violations = validate(back, vo);
    if (!violations.empty()) return violations.front().message;
    return std::nullopt;
  } catch (const Error& err) {
    return std::string(err.what());
  }
}

EmitResult build_training_set(const std::vector<ReflectionDraft>& drafts,
                              const std::vector<QARecord>& records, const EmitOptions& options) {
  options.tokens.check();
  const auto grouped = group_drafts(drafts, records);
  std::vector<std::optional<TrainingExample>> built(grouped.size());
  std::vector<std::string> reasons(grouped.size());
  parallel_for(grouped.size(), std::thread::hardware_concurrency(), [&](std::size_t i) {
    try {
      auto e = make_example(grouped[i], options.mode, options.tokens);
      if (auto bad = check_parse_back(e, grouped[i].trajectory, options.tokens)) {
        reasons[i] = *bad;
      } else {
        built[i] = std::move(e);
      }
    } catch (const Error& err) {
      reasons[i] = err.what();
    }
  });

  EmitResult out;
  for (std::size_t i = 0; i < grouped.size(); ++i) {
    if (built[i]) {
      out.examples.push_back(std::move(*built[i]));
    } else {
      out.rejected.push_back({grouped[i].id, reasons[i]});
    }
  }
  if (options.strict && !out.rejected.empty()) {
    throw Error(ErrorCode::ValidationFailure, "example " + out.rejected.front().id +
                                                  " failed parse-back: " + out.rejected.front().reason);
  }
  out.stats = compute_stats(out.examples, options.tokens);
  return out;
}

EmitResult emit_training_file(const std::vector<ReflectionDraft>& drafts,
                              const std::vector<QARecord>& records, const EmitOptions& options,
                              const std::filesystem::path& out_path) {
  auto result = build_training_set(drafts, records, options);
  std::vector<io::ordered_json> rows;
  rows.reserve(result.examples.size());
  for (const auto& e : result.examples) rows.push_back(to_json(e));
  io::write_jsonl(out_path, rows);
  return result;
}

io::ordered_json token_manifest(const SpecialTokens& tokens) {
  tokens.check();
  io::ordered_json list = io::ordered_json::array();
  for (auto t : tokens.all()) list.push_back(std::string(t));
  return {{"special_tokens", std::move(list)}};
}

void emit_token_manifest(const SpecialTokens& tokens, const std::filesystem::path& out_path) {
  io::write_json(out_path, token_manifest(tokens));
}

DatasetStats compute_stats(const std::vector<TrainingExample>& examples,
                           const SpecialTokens& tokens) {
  DatasetStats s;
  std::vector<std::size_t> lengths;
  for (const auto& e : examples) {
    ++s.total;
    ++s.per_source[std::string(to_string(e.source))];
    ++s.per_mode[std::string(to_string(e.mode))];
    ++s.pinpoints[e.pinpoints];
    const auto& text = e.assistant();
    lengths.push_back(text.size());
    if (auto blocks = count_think_blocks(text, tokens)) {
      ++s.reflection_blocks[*blocks];
    } else {
      ++s.unbalanced;
    }
  }
  if (!lengths.empty()) {
    double sum = 0;
    for (auto l : lengths) sum += static_cast<double>(l);
    s.mean_assistant_length = sum / static_cast<double>(lengths.size());
    std::sort(lengths.begin(), lengths.end());
    const auto n = lengths.size();
    s.median_assistant_length = n % 2 ? static_cast<double>(lengths[n / 2])
                                      : (static_cast<double>(lengths[n / 2 - 1]) +
                                         static_cast<double>(lengths[n / 2])) / 2.0;
  }
  return s;
}

DatasetStats compute_stats(const std::filesystem::path& file, const SpecialTokens& tokens) {
  std::vector<TrainingExample> examples;
  for (const auto& row : io::read_jsonl(file)) {
    try {
      examples.push_back(example_from_json(row.value));
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError,
                  file.string() + ":" + std::to_string(row.line) + ": " + e.what());
    }
  }
  return compute_stats(examples, tokens);
}

io::ordered_json to_json(const DatasetStats& s) {
  auto counts = [](const auto& m) {
    io::ordered_json j = io::ordered_json::object();
    for (const auto& [k, v] : m) {
      if constexpr (std::is_same_v<std::decay_t<decltype(k)>, std::string>) {
        j[k] = v;
      } else {
        j[std::to_string(k)] = v;
      }
    }
    return j;
  };
  auto opt = [](const std::optional<double>& v) {
    return v ? io::ordered_json(*v) : io::ordered_json(nullptr);
  };
  return {{"total", s.total},
          {"per_source", counts(s.per_source)},
          {"per_mode", counts(s.per_mode)},
          {"pinpoints", counts(s.pinpoints)},
          {"reflection_blocks", counts(s.reflection_blocks)},
          {"assistant_length", {{"mean", opt(s.mean_assistant_length)},
                                {"median", opt(s.median_assistant_length)}}},
          {"unbalanced", s.unbalanced}};
}

std::vector<TrainingExample> sample_examples(const std::vector<TrainingExample>& examples,
                                             const std::map<Source, std::size_t>& per_source,
                                             std::uint64_t seed) {
  std::vector<char> keep(examples.size(), 0);
  for (const auto& [source, want] : per_source) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (examples[i].source == source) pool.push_back(i);
    }
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(source)));
    rng.shuffle(pool);
    pool.resize(std::min(pool.size(), want));
    for (auto i : pool) keep[i] = 1;
  }
  std::vector<TrainingExample> out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (keep[i]) out.push_back(examples[i]);
  }
  return out;
}

}  // namespace reflectforge
