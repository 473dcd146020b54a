#include <gtest/gtest.h>

#include <numeric>

#include "reflectforge/error.hpp"
#include "reflectforge/eval.hpp"
#include "reflectforge/pinpoint.hpp"
#include "support/decision_vectors.hpp"
#include "support/mock_helpers.hpp"
#include "support/temp_dir.hpp"

using namespace reflectforge;
using namespace reflectforge::test_support;

namespace {

const PromptCatalog& catalog() {
  static const PromptCatalog c = PromptCatalog::defaults();
  return c;
}

std::map<std::string, std::string> letters_only(const std::vector<std::string>& letters) {
  std::map<std::string, std::string> m;
  for (const auto& l : letters) m[l] = "option text " + l;
  return m;
}

std::vector<QARecord> bench(int n) {
  static const char* golds = "ABCD";
  std::vector<QARecord> out;
  for (int i = 0; i < n; ++i) {
    QARecord r;
    r.id = "bench:" + std::to_string(100 + i);
    r.source = Source::multichoice;
    r.question = "Question number " + std::to_string(i) + "?";
    r.options = {{"A", "alpha"}, {"B", "beta"}, {"C", "gamma"}, {"D", "delta"}};
    r.gold = std::string(1, golds[i % 4]);
    out.push_back(r);
  }
  return out;
}

std::string gold_of(const std::string& id, const std::vector<QARecord>& recs) {
  for (const auto& r : recs) {
    if (r.id == id) return r.gold;
  }
  return "";
}

std::string other_than(const std::string& gold) { return gold == "A" ? "B" : "A"; }

}  // namespace

TEST(ExtractChoice, AgreesWithDecisionCascade) {
  for (const auto& v : decision_vectors()) {
    const auto opts = letters_only(v.letters);
    for (auto policy : {ChoicePolicy::letters, ChoicePolicy::letters_then_text}) {
      if (v.expected) {
        EXPECT_EQ(extract_choice(v.text, opts, policy), *v.expected) << v.text;
        EXPECT_EQ(extract_choice(v.text, opts, policy), extract_decision(v.text, v.letters));
      } else {
        EXPECT_THROW(extract_choice(v.text, opts, policy), Error) << v.text;
      }
    }
  }
}

TEST(ExtractChoice, TextPolicy) {
  const std::map<std::string, std::string> opts = {{"A", "Escherichia coli"},
                                                   {"B", "Staphylococcus aureus"},
                                                   {"C", "Pseudomonas aeruginosa"},
                                                   {"D", "Proteus"}};
  EXPECT_EQ(extract_choice("...so the best choice is (D).", opts), "D");
  const std::string by_name = "Burn wound with green pus; the organism is pseudomonas aeruginosa";
  EXPECT_EQ(extract_choice(by_name, opts, ChoicePolicy::letters_then_text), "C");
  EXPECT_THROW(extract_choice(by_name, opts, ChoicePolicy::letters), Error);
  // The option mentioned last wins.
  EXPECT_EQ(extract_choice("Not Proteus; it is Escherichia coli.", opts,
                           ChoicePolicy::letters_then_text),
            "A");
  // Substrings inside longer words do not count.
  EXPECT_THROW(extract_choice("Proteusiform rods", opts, ChoicePolicy::letters_then_text), Error);
  try {
    extract_choice("lorem ipsum dolor", opts, ChoicePolicy::letters_then_text);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoDecisionFound);
  }
}

TEST(Evaluate, ScriptedSevenOfTen) {
  const auto recs = bench(10);
  auto gw = responder_gateway([&](const llm::ChatRequest& req, Rng&) -> std::string {
    const auto id = tag_id(req.tag);
    const auto gold = gold_of(id, recs);
    const bool right = std::stoi(id.substr(6)) < 107;
    return "Reasoning. Therefore, the answer is (" + (right ? gold : other_than(gold)) + ").";
  });
  EvalConfig cfg;
  auto r = evaluate_records(cfg, recs, gw, catalog());
  EXPECT_EQ(r.n_items, 10u);
  ASSERT_EQ(r.per_repeat.size(), 1u);
  EXPECT_EQ(r.per_repeat[0], 0.7);
  EXPECT_EQ(r.mean_accuracy, 0.7);
  EXPECT_EQ(r.items.size(), 10u);
  EXPECT_EQ(r.items[0].id, "bench:100");
}

TEST(Evaluate, RepeatsAverageAndDeterministicRepeatsAgree) {
  const auto recs = bench(40);
  EvalConfig cfg;
  cfg.repeats = 5;
  auto noisy = responder_gateway([&](const llm::ChatRequest& req, Rng& rng) -> std::string {
    const auto gold = gold_of(tag_id(req.tag), recs);
    return "The answer is (" + (rng.bernoulli(0.6) ? gold : other_than(gold)) + ").";
  }, 4, 99);
  auto r = evaluate_records(cfg, recs, noisy, catalog());
  ASSERT_EQ(r.per_repeat.size(), 5u);
  EXPECT_DOUBLE_EQ(r.mean_accuracy,
                   std::accumulate(r.per_repeat.begin(), r.per_repeat.end(), 0.0) / 5.0);
  for (std::size_t k = 0; k < 5; ++k) {
    std::size_t correct = 0;
    for (const auto& i : r.items) correct += i.repeat == static_cast<int>(k) && i.correct;
    EXPECT_DOUBLE_EQ(r.per_repeat[k], static_cast<double>(correct) / 40.0);
  }
  EXPECT_NE(*std::min_element(r.per_repeat.begin(), r.per_repeat.end()),
            *std::max_element(r.per_repeat.begin(), r.per_repeat.end()));

  auto fixed = responder_gateway([&](const llm::ChatRequest& req, Rng&) -> std::string {
    const auto id = tag_id(req.tag);
    return "Answer: " + (id.back() % 3 ? gold_of(id, recs) : std::string("Z"));
  });
  auto d = evaluate_records(cfg, recs, fixed, catalog());
  for (double a : d.per_repeat) EXPECT_EQ(a, d.per_repeat[0]);
  EXPECT_EQ(d.mean_accuracy, d.per_repeat[0]);
}

TEST(Evaluate, UnparsedAndFailedItems) {
  const auto recs = bench(4);
  auto gw = responder_gateway([&](const llm::ChatRequest& req, Rng&) -> std::string {
    const auto id = tag_id(req.tag);
    if (id == "bench:100") return "I cannot decide.";
    if (id == "bench:101") throw Error(ErrorCode::ClientError, "bad request");
    return "Final answer: " + gold_of(id, recs);
  });
  EvalConfig cfg;
  auto r = evaluate_records(cfg, recs, gw, catalog());
  EXPECT_EQ(r.per_repeat[0], 0.5);
  EXPECT_TRUE(r.items[0].unparsed);
  EXPECT_FALSE(r.items[0].correct);
  EXPECT_TRUE(r.items[1].failed);
  cfg.unparsed = UnparsedPolicy::exclude;
  EXPECT_EQ(evaluate_records(cfg, recs, gw, catalog()).per_repeat[0], 1.0);
}

TEST(Evaluate, DatasetErrors) {
  TempDir tmp;
  EvalConfig cfg;
  cfg.dataset = tmp.path() / "missing.jsonl";
  auto gw = responder_gateway([](const llm::ChatRequest&, Rng&) -> std::string { return "A"; });
  try {
    evaluate_model(cfg, gw, catalog());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DatasetError);
  }
  cfg.dataset = tmp.write("consult.jsonl", "{\"input\":\"q\",\"output\":\"a\"}\n");
  EXPECT_THROW(evaluate_model(cfg, gw, catalog()), Error);
  cfg.dataset = tmp.write("ok.jsonl",
                          "{\"question\":\"Is it?\",\"opa\":\"x\",\"opb\":\"y\",\"cop\":1}\n");
  cfg.repeats = 0;
  EXPECT_THROW(evaluate_model(cfg, gw, catalog()), Error);
  cfg.repeats = 2;
  auto r = evaluate_model(cfg, gw, catalog());
  EXPECT_EQ(r.per_repeat, (std::vector<double>{0.0, 0.0}));
}

TEST(Evaluate, ReportAndCsv) {
  const auto recs = bench(2);
  auto gw = responder_gateway([](const llm::ChatRequest&, Rng&) -> std::string {
    return "He said \"maybe\" <Think>Question: why?\nAnswer: because.</Think> Answer: A";
  });
  EvalConfig cfg;
  cfg.benchmark = "tiny";
  auto r = evaluate_records(cfg, recs, gw, catalog());
  auto j = to_json(r, {{"repeats", 1}});
  EXPECT_EQ(j["config"]["repeats"], 1);
  EXPECT_EQ(j["benchmark"], "tiny");
  EXPECT_EQ(j["reflection"]["fraction_reflecting"], 1.0);
  const auto csv = items_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "repeat,id,gold,extracted,correct,unparsed,failed,response");
  EXPECT_NE(csv.find("\"He said \"\"maybe\"\""), std::string::npos);
}

TEST(ReflectionStatistics, Examples) {
  auto s = reflection_statistics({"a <Think>x</Think> b", "plain"});
  EXPECT_EQ(*s.fraction_reflecting, 0.5);
  EXPECT_EQ(*s.mean_blocks, 0.5);
  EXPECT_EQ(*s.mean_length, (20.0 + 5.0) / 2.0);

  auto empty = reflection_statistics({});
  EXPECT_EQ(empty.responses, 0u);
  EXPECT_FALSE(empty.fraction_reflecting);
  EXPECT_FALSE(empty.mean_blocks);
  EXPECT_TRUE(to_json(empty)["mean_blocks"].is_null());

  auto three = reflection_statistics({"<Think>a</Think><Think>b</Think> x <Think>c</Think>"});
  EXPECT_EQ(three.total_blocks, 3u);
  EXPECT_EQ(three.distribution, (std::map<std::size_t, std::size_t>{{3, 1}}));

  auto broken = reflection_statistics({"<Think>open only", "<Think>a</Think>"});
  EXPECT_EQ(broken.unbalanced, 1u);
  EXPECT_EQ(*broken.fraction_reflecting, 0.5);
  EXPECT_EQ(broken.distribution.at(0), 1u);
}

TEST(ReflectionStatistics, PlantedDistribution) {
  Rng rng(5);
  std::vector<std::string> responses;
  std::size_t planted_blocks = 0, planted_reflecting = 0;
  for (int i = 0; i < 300; ++i) {
    const auto k = rng.index(4);
    std::string r = "Step one.";
    for (std::size_t b = 0; b < k; ++b) r += " <Think>Question: q?\nAnswer: a.</Think> more.";
    planted_blocks += k;
    planted_reflecting += k > 0;
    responses.push_back(r);
  }
  auto s = reflection_statistics(responses);
  EXPECT_EQ(s.total_blocks, planted_blocks);
  EXPECT_EQ(s.reflecting, planted_reflecting);
  EXPECT_EQ(*s.fraction_reflecting, static_cast<double>(planted_reflecting) / 300.0);
}
