// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "malformed_corpus.hpp"
#include "reflectforge/emitter.hpp"
#include "reflectforge/error.hpp"
#include "reflectforge/eval.hpp"
#include "reflectforge/filter.hpp"
#include "reflectforge/pinpoint.hpp"
#include "reflectforge/pipeline.hpp"
#include "reflectforge/rng.hpp"
#include "reflectforge/simulated.hpp"
#include "reflectforge/trajectory.hpp"
#include "support/binomial.hpp"
#include "support/drafts.hpp"
#include "support/filter_mock.hpp"
#include "support/generators.hpp"
#include "support/mock_helpers.hpp"
#include "support/pipeline_fixture.hpp"

using namespace reflectforge;
namespace ts = reflectforge::test_support;
namespace fs = std::filesystem;

namespace {

// Tolerances and limits.
constexpr double kRoundTripSeconds = 5.0;
constexpr double kFilterTolerance = 0.02;
constexpr double kPipelineSeconds = 60.0;
constexpr std::size_t kLeakWindow = 15;

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& name)
      : path_(fs::temp_directory_path() / ("rf_acceptance_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// ---------------------------------------------------------------------------

Verdict round_trip() {
  Rng rng(1000);
  const auto t0 = Clock::now();
  int ok = 0;
  std::string first_bad;
  for (int i = 0; i < 1000; ++i) {
    auto t = ts::random_reflective(rng, 1 + rng.index(3));
    try {
      if (structurally_equal(parse_training_text(serialize_training_text(t)), t)) {
        ++ok;
      } else if (first_bad.empty()) {
        first_bad = "trajectory " + std::to_string(i) + " differs";
      }
    } catch (const Error& e) {
      if (first_bad.empty()) first_bad = e.what();
    }
  }
  const double secs = seconds_since(t0);
  return {ok == 1000 && secs < kRoundTripSeconds,
          std::to_string(ok) + "/1000 equal in " + fmt("%.3f", secs) + " s (limit 5 s)" +
              (first_bad.empty() ? "" : "; " + first_bad)};
}

Verdict grammar_rejection() {
  const auto corpus = acceptance::malformed_corpus();
  std::size_t ok = 0;
  std::string first_bad;
  for (const auto& c : corpus) {
    std::string got = "accepted";
    try {
      parse_training_text(c.text, {}, c.grammar);
    } catch (const Error& e) {
      got = std::string(to_string(e.code()));
      if (e.code() == c.expected) {
        ++ok;
        continue;
      }
    }
    if (first_bad.empty()) {
      first_bad = "; " + c.label + ": expected " + std::string(to_string(c.expected)) + ", got " + got;
    }
  }
  return {corpus.size() == 50 && ok == corpus.size(),
          std::to_string(ok) + "/" + std::to_string(corpus.size()) +
              " rejected with the expected class" + first_bad};
}

double retention(double p, std::size_t n) {
  const QARecord rec = ts::mcq();
  std::vector<ReflectionDraft> drafts(n, ts::rg1_draft());
  for (std::size_t i = 0; i < n; ++i) drafts[i].pinpoint.id = rec.id + "#RG1-" + std::to_string(i);
  llm::MockOptions opts;
  opts.seed = 20240601;
  opts.fallback = ts::bernoulli_rg1(p);
  opts.keep_log = false;
  llm::BackendConfig cfg;
  cfg.max_in_flight = 16;
  llm::Gateway gw(cfg, std::make_shared<llm::MockBackend>(std::vector<llm::ScriptRule>{}, opts));
  auto res = filter_dataset(drafts, {rec}, FilterParams{}, gw, PromptCatalog::defaults());
  return static_cast<double>(res.summary.total.retained) / static_cast<double>(n);
}

bool boundary_retained(int successes) {
  const QARecord rec = ts::mcq();
  auto gw = ts::responder_gateway([successes](const llm::ChatRequest& r, Rng&) -> std::string {
    const bool good = ts::tag_ordinal(r.tag) < static_cast<std::size_t>(successes);
    return std::string("Therefore, the answer is (") + (good ? "C" : "B") + ").";
  });
  auto v = assess_instance(ts::rg1_draft(), rec, FilterParams{}, gw, PromptCatalog::defaults());
  return v.successes == successes && v.retained;
}

Verdict filter_law() {
  bool pass = true;
  std::ostringstream d;
  // Exhaustive check of the p = 0.5 oracle against the mask count.
  unsigned masks = 0;
  for (unsigned m = 0; m < 1024; ++m) masks += std::popcount(m) >= 6 ? 1 : 0;
  pass &= masks == 386 && std::abs(ts::binomial_tail(10, 6, 0.5) - 386.0 / 1024.0) < 1e-15;
  for (double p : {0.3, 0.5, 0.8}) {
    const double expect = ts::binomial_tail(10, 6, p);
    const double got = retention(p, 10000);
    const bool ok = std::abs(got - expect) <= kFilterTolerance;
    pass &= ok;
    d << "p=" << p << " " << fmt("%.4f", got) << " vs " << fmt("%.4f", expect) << (ok ? "" : " (off)")
      << "; ";
  }
  const bool b6 = boundary_retained(6);
  const bool b5 = boundary_retained(5);
  pass &= b6 && !b5;
  d << "6/10 " << (b6 ? "kept" : "dropped") << ", 5/10 " << (b5 ? "kept" : "dropped")
    << " (tolerance 0.02)";
  return {pass, d.str()};
}

// ---------------------------------------------------------------------------
// RG2 cardinality over scripted records with planted per-entity error counts.

struct PlantedEntity {
  std::string term;
  std::string type;
  std::string sentence;
  int wrong = 0;  // of 10 probes
};

struct PlantedRecord {
  QARecord record;
  std::vector<PlantedEntity> entities;
};

std::vector<PlantedRecord> planted_records(std::size_t n) {
  const auto& lex = simulated_lexicon();
  Rng rng(200);
  std::vector<PlantedRecord> out;
  for (std::size_t r = 0; r < n; ++r) {
    PlantedRecord pr;
    std::vector<std::size_t> pick(lex.size());
    for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
    rng.shuffle(pick);
    const std::size_t k = rng.index(7);  // 0..6 entities
    std::string reasoning;
    for (std::size_t e = 0; e < k; ++e) {
      PlantedEntity pe;
      pe.term = lex[pick[e]].term;
      pe.type = lex[pick[e]].type;
      pe.sentence = "Point " + std::to_string(e + 1) + " of the plan involves " + pe.term + " today.";
      // A third of the entities are always filled correctly.
      pe.wrong = rng.bernoulli(1.0 / 3.0) ? 0 : static_cast<int>(rng.index(11));
      reasoning += pe.sentence + " ";
      pr.entities.push_back(pe);
    }
    reasoning += "Please return if things get worse.";
    if (k == 0) reasoning = "Rest at home for a while. Drink plenty of water. " + reasoning;
    char id[32];
    std::snprintf(id, sizeof id, "planted:%06zu", r + 1);
    pr.record.id = id;
    pr.record.source = Source::consultation;
    pr.record.question = "What should I do about my symptoms?";
    pr.record.gold = reasoning;
    pr.record.reasoning = reasoning;
    out.push_back(std::move(pr));
  }
  return out;
}

Verdict rg2_cardinality() {
  const auto planted = planted_records(200);
  std::map<std::string, const PlantedRecord*> by_id;
  for (const auto& p : planted) by_id[p.record.id] = &p;

  auto responder = [&](const llm::ChatRequest& req, Rng&) -> std::string {
    const auto task = task_of(req.tag);
    const std::string prompt = req.prompt_text();
    std::string rid = ts::tag_id(req.tag);
    rid = rid.substr(0, rid.find('#'));
    const auto* pr = by_id.at(rid);
    if (task == task::entity_extract) {
      io::ordered_json arr = io::ordered_json::array();
      for (const auto& e : pr->entities) arr.push_back({{"entity", e.term}, {"type", e.type}});
      return "Entities:\n" + arr.dump();
    }
    if (task == task::mask_fill) {
      for (const auto& e : pr->entities) {
        if (prompt.find(mask_entity(e.sentence, e.term, parse_entity_type(e.type))) == std::string::npos) {
          continue;
        }
        return static_cast<int>(ts::tag_ordinal(req.tag)) < e.wrong ? "placebo" : e.term;
      }
      return "unknown";
    }
    if (task == task::judge) return "no";
    return "";
  };
  auto gw = ts::responder_gateway(responder, 16, 3);
  const auto prompts = PromptCatalog::defaults();

  std::size_t bad = 0, total_pins = 0, zero_pinned = 0, zero_entities = 0;
  std::map<std::size_t, std::size_t> dist;
  std::string first_bad;
  for (const auto& pr : planted) {
    auto res = rg2_generate_pinpoints(pr.record, Rg2Params{}, gw, prompts);
    const auto& pins = res.pinpoints;
    ++dist[pins.size()];
    total_pins += pins.size();
    bool ok = pins.size() <= 3;
    for (std::size_t i = 1; i < pins.size(); ++i) {
      ok &= pins[i - 1].rg2->error_rate >= pins[i].rg2->error_rate;
    }
    // Oracle: planted rates >= 0.5, highest first, earlier sentence on ties,
    // at most three.
    std::vector<std::pair<int, std::size_t>> expect;
    for (std::size_t e = 0; e < pr.entities.size(); ++e) {
      const auto& pe = pr.entities[e];
      if (pe.wrong == 0) ++zero_entities;
      if (pe.wrong >= 5) expect.emplace_back(-pe.wrong, e);
    }
    std::sort(expect.begin(), expect.end());
    if (expect.size() > 3) expect.resize(3);
    ok &= expect.size() == pins.size();
    for (std::size_t i = 0; ok && i < pins.size(); ++i) {
      const auto& pe = pr.entities[expect[i].second];
      ok &= pins[i].rg2->surface == pe.term;
      ok &= std::abs(pins[i].rg2->error_rate - pe.wrong / 10.0) < 1e-12;
    }
    for (const auto& p : pins) {
      for (const auto& pe : pr.entities) {
        if (pe.wrong == 0 && p.rg2->surface == pe.term) ++zero_pinned;
      }
    }
    if (!ok) {
      ++bad;
      if (first_bad.empty()) first_bad = "; first mismatch " + pr.record.id;
    }
  }
  std::ostringstream d;
  d << (200 - bad) << "/200 records match; " << total_pins << " pinpoints, per-record counts {";
  for (const auto& [k, v] : dist) d << k << ":" << v << (k == dist.rbegin()->first ? "" : ", ");
  d << "}; " << zero_entities << " all-correct entities, " << zero_pinned << " pinned" << first_bad;
  return {bad == 0 && zero_pinned == 0 && zero_entities > 0 && dist.count(3) && dist.count(0),
          d.str()};
}

// ---------------------------------------------------------------------------
// End-to-end: determinism, ablation purity and the closed-book audit share
// the two fixture runs.

struct PipelineRuns {
  fs::path a, b;
  double seconds = 0.0;
  std::string error;
};

PipelineRuns run_pipeline_twice(const fs::path& root) {
  PipelineRuns out{root / "run1", root / "run2"};
  const auto t0 = Clock::now();
  try {
    for (const auto& dir : {out.a, out.b}) {
      auto c = ts::fixture_config(dir);
      pipeline::run(c, pipeline::default_stages(c));
    }
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  out.seconds = seconds_since(t0);
  return out;
}

Verdict determinism(const PipelineRuns& runs) {
  if (!runs.error.empty()) return {false, runs.error};
  const auto a = ts::dir_bytes(runs.a);
  const auto b = ts::dir_bytes(runs.b);
  std::size_t same = 0, compared = 0;
  std::string diff;
  for (const auto& [name, bytes] : a) {
    ++compared;
    auto it = b.find(name);
    if (it != b.end() && it->second == bytes) {
      ++same;
    } else if (diff.empty()) {
      diff = "; differs: " + name;
    }
  }
  const pipeline::Artifacts art{runs.a};
  std::size_t records = 0;
  std::map<Source, std::size_t> per_source;
  for (const auto& row : io::read_jsonl(art.records())) {
    ++records;
    ++per_source[record_from_json(row.value).source];
  }
  bool needed = a.count("tokens.json") && a.count("stats.json");
  for (auto m : kAllAblationModes) needed &= a.count(art.training(m).filename().string()) > 0;
  const bool pass = same == compared && a.size() == b.size() && needed &&
                    per_source[Source::consultation] == 50 &&
                    per_source[Source::multichoice] == 50 && runs.seconds < kPipelineSeconds;
  return {pass, std::to_string(same) + "/" + std::to_string(compared) +
                    " artifacts byte-identical over " + std::to_string(records) +
                    " records; two runs in " + fmt("%.2f", runs.seconds) + " s (limit 60 s)" + diff};
}

// Think-block bodies of a text, by the raw token positions.
std::vector<std::string> think_bodies(const std::string& s, const SpecialTokens& t) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = s.find(t.think_open, pos)) != std::string::npos) {
    const auto start = pos + t.think_open.size();
    const auto end = s.find(t.think_close, start);
    if (end == std::string::npos) break;
    out.push_back(s.substr(start, end - start));
    pos = end;
  }
  return out;
}

Verdict ablation_purity(const PipelineRuns& runs) {
  if (!runs.error.empty()) return {false, runs.error};
  const pipeline::Artifacts art{runs.a};
  const SpecialTokens tokens;
  std::size_t lines = 0, bad = 0, blocks = 0;
  std::string first_bad;
  for (auto mode : kAllAblationModes) {
    for (const auto& row : io::read_jsonl(art.training(mode))) {
      ++lines;
      const auto ex = example_from_json(row.value);
      const std::string& text = ex.assistant();
      bool ok = ex.mode == mode;
      try {
        auto parsed = parse_training_text(text, tokens, grammar_for(mode));
        const auto bodies = think_bodies(text, tokens);
        switch (mode) {
          case AblationMode::no_reflect:
          case AblationMode::original:
            ok &= !tokens.find_in(text) && parsed.reflection_count() == 0;
            break;
          case AblationMode::question_only:
            ok &= !bodies.empty() && parsed.reflection_count() == bodies.size();
            for (const auto& b : bodies) {
              ok &= b.starts_with("Question:") && b.find("Answer:") == std::string::npos;
            }
            break;
          case AblationMode::answer_only:
            ok &= !bodies.empty() && parsed.reflection_count() == bodies.size();
            for (const auto& b : bodies) {
              ok &= b.starts_with("Answer:") && b.find("Question:") == std::string::npos;
            }
            break;
          case AblationMode::full:
            ok &= !bodies.empty() && parsed.reflection_count() == bodies.size();
            break;
        }
        blocks += bodies.size();
      } catch (const Error& e) {
        ok = false;
        if (first_bad.empty()) first_bad = std::string("; ") + e.what();
      }
      if (!ok) {
        ++bad;
        if (first_bad.empty()) first_bad = "; first bad line in " + std::string(to_string(mode));
      }
    }
  }
  return {bad == 0 && lines > 0,
          std::to_string(lines - bad) + "/" + std::to_string(lines) +
              " lines pass across 5 modes (" + std::to_string(blocks) + " think blocks checked)" +
              first_bad};
}

Verdict closed_book(const PipelineRuns& runs) {
  if (!runs.error.empty()) return {false, runs.error};
  const pipeline::Artifacts art{runs.a};
  std::map<std::string, QARecord> records;
  for (const auto& row : io::read_jsonl(art.records())) {
    auto r = record_from_json(row.value);
    records.emplace(r.id, r);
  }
  std::size_t drafts = 0, clean = 0, transcripts = 0;
  std::string first_bad;
  for (const auto& row : io::read_jsonl(art.drafts())) {
    const auto d = draft_from_json(row.value);
    ++drafts;
    const std::string q = user_content(records.at(d.pinpoint.record_id));
    bool ok = false;
    for (const auto& ex : d.transcript) {
      if (task_of(ex.tag) != task::reflection_answer) continue;
      ok = true;
      ++transcripts;
      // Every 15-character window of Q, looked up verbatim in the prompt.
      for (std::size_t i = 0; ok && i + kLeakWindow <= q.size(); ++i) {
        if (ex.prompt.find(q.substr(i, kLeakWindow)) != std::string::npos) ok = false;
      }
    }
    if (ok) {
      ++clean;
    } else if (first_bad.empty()) {
      first_bad = "; leak or missing transcript in " + d.id();
    }
  }
  return {drafts >= 100 && clean == drafts,
          std::to_string(clean) + "/" + std::to_string(drafts) + " drafts clean (" +
              std::to_string(transcripts) + " answer prompts scanned)" + first_bad};
}

// ---------------------------------------------------------------------------

Verdict eval_exactness() {
  EvalConfig cfg;
  cfg.benchmark = "fixture";
  cfg.dataset = fs::path(REFLECTFORGE_FIXTURES) / "eval.jsonl";
  const auto items = load_multichoice(cfg.dataset, cfg.schema);
  if (items.size() != 20) return {false, "fixture has " + std::to_string(items.size()) + " items"};
  std::vector<std::string> ids;
  for (const auto& r : items) ids.push_back(r.id);
  std::sort(ids.begin(), ids.end());
  std::map<std::string, std::string> answer;
  for (const auto& r : items) {
    const bool gold = std::find(ids.begin(), ids.begin() + 13, r.id) != ids.begin() + 13;
    std::string wrong;
    for (const auto& l : r.option_letters()) {
      if (l != r.gold) {
        wrong = l;
        break;
      }
    }
    answer[r.id] = gold ? r.gold : wrong;
  }
  auto gw = ts::responder_gateway([&](const llm::ChatRequest& req, Rng&) {
    return "Reasoning through the options. Therefore, the answer is (" +
           answer.at(ts::tag_id(req.tag)) + ").";
  });
  const auto prompts = PromptCatalog::defaults();
  auto one = evaluate_model(cfg, gw, prompts);
  cfg.repeats = 5;
  auto five = evaluate_model(cfg, gw, prompts);
  bool equal = five.per_repeat.size() == 5;
  for (double a : five.per_repeat) equal &= a == five.per_repeat.front();
  const bool pass = one.mean_accuracy == 13.0 / 20.0 && one.n_items == 20 && equal &&
                    five.per_repeat.front() == 13.0 / 20.0 &&
                    std::abs(five.mean_accuracy - 0.65) < 1e-12;
  return {pass, "accuracy " + fmt("%.3f", one.mean_accuracy) + "; 5 repeats " +
                    (equal ? "equal at " : "differ, first ") + fmt("%.3f", five.per_repeat.front()) +
                    ", mean " + fmt("%.3f", five.mean_accuracy)};
}

Verdict reflection_stats() {
  Rng rng(100);
  std::vector<std::string> responses;
  std::size_t reflecting = 0, total = 0;
  std::map<std::size_t, std::size_t> planted;
  for (int i = 0; i < 100; ++i) {
    const std::size_t k = rng.index(4);
    std::string s = "Looking at the findings first.";
    for (std::size_t b = 0; b < k; ++b) {
      s += "\nStep " + std::to_string(b) +
           " <Think>Question: Is this right?\nAnswer: Not quite.</Think> <Modified>Fixed step.</Modified>";
    }
    s += "\nTherefore, the answer is (A).";
    responses.push_back(s);
    reflecting += k > 0 ? 1 : 0;
    total += k;
    ++planted[k];
  }
  const auto st = reflection_statistics(responses);
  const double frac = static_cast<double>(reflecting) / 100.0;
  const double mean = static_cast<double>(total) / 100.0;
  const bool pass = st.responses == 100 && st.fraction_reflecting == frac && st.mean_blocks == mean &&
                    st.distribution == planted && st.unbalanced == 0;
  return {pass, "fraction " + fmt("%.2f", st.fraction_reflecting.value_or(-1)) + " (planted " +
                    fmt("%.2f", frac) + "), mean " + fmt("%.2f", st.mean_blocks.value_or(-1)) +
                    " (planted " + fmt("%.2f", mean) + ")"};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](const char* name, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s  %-22s %s\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  };

  report("trajectory-round-trip", round_trip);
  report("grammar-rejection", grammar_rejection);
  report("filter-threshold-law", filter_law);
  report("rg2-cardinality", rg2_cardinality);

  ScratchDir scratch("pipeline");
  const auto runs = run_pipeline_twice(scratch.path());
  report("pipeline-determinism", [&] { return determinism(runs); });
  report("ablation-purity", [&] { return ablation_purity(runs); });
  report("eval-exactness", eval_exactness);
  report("reflection-statistics", reflection_stats);
  report("closed-book-audit", [&] { return closed_book(runs); });

  std::printf("%d of 9 criteria failed\n", failed);
  return failed;
}
