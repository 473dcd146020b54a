#include <gtest/gtest.h>

#include "reflectforge/error.hpp"
#include "reflectforge/filter.hpp"
#include "support/binomial.hpp"
#include "support/drafts.hpp"
#include "support/filter_mock.hpp"
#include "support/mock_helpers.hpp"

using namespace reflectforge;
using namespace reflectforge::test_support;

namespace {

const PromptCatalog& catalog() {
  static const PromptCatalog c = PromptCatalog::defaults();
  return c;
}

llm::Responder answer_rg1(std::function<bool(std::size_t)> correct) {
  return [=](const llm::ChatRequest& req, Rng&) -> std::string {
    return correct(tag_ordinal(req.tag)) ? "So the answer is (C)." : "The answer is B.";
  };
}

}  // namespace

TEST(BinomialOracle, TailAtSixOfTenIsExact) {
  std::uint64_t count = 0;
  for (unsigned mask = 0; mask < 1024; ++mask) {
    if (__builtin_popcount(mask) >= 6) ++count;
  }
  EXPECT_EQ(count, 386u);
  EXPECT_DOUBLE_EQ(binomial_tail(10, 6, 0.5), 386.0 / 1024.0);
  EXPECT_NEAR(binomial_tail(10, 6, 0.8), 0.9672065024, 1e-10);
  EXPECT_NEAR(binomial_tail(10, 0, 0.3), 1.0, 1e-12);
}

TEST(FilterRg1, AlwaysGoldRetained) {
  auto gw = responder_gateway(answer_rg1([](std::size_t) { return true; }));
  auto v = assess_instance(rg1_draft(), mcq(), {}, gw, catalog());
  EXPECT_EQ(v.trials, 10);
  EXPECT_EQ(v.successes, 10);
  EXPECT_TRUE(v.retained);
  ASSERT_EQ(v.per_trial.size(), 10u);
  for (int t = 0; t < 10; ++t) {
    EXPECT_EQ(v.per_trial[t].ordinal, t);
    EXPECT_EQ(v.per_trial[t].decision, "C");
    EXPECT_EQ(v.per_trial[t].tag, "filter.rg1|mcq:000001#RG1-0|" + std::to_string(t));
  }
}

TEST(FilterRg1, AlwaysWrongDiscarded) {
  auto gw = responder_gateway(answer_rg1([](std::size_t) { return false; }));
  auto v = assess_instance(rg1_draft(), mcq(), {}, gw, catalog());
  EXPECT_EQ(v.successes, 0);
  EXPECT_FALSE(v.retained);
}

TEST(FilterRg1, BoundaryAtSix) {
  auto six = responder_gateway(answer_rg1([](std::size_t t) { return t < 6; }));
  auto v6 = assess_instance(rg1_draft(), mcq(), {}, six, catalog());
  EXPECT_EQ(v6.successes, 6);
  EXPECT_TRUE(v6.retained);
  auto five = responder_gateway(answer_rg1([](std::size_t t) { return t % 2 == 1; }));
  auto v5 = assess_instance(rg1_draft(), mcq(), {}, five, catalog());
  EXPECT_EQ(v5.successes, 5);
  EXPECT_FALSE(v5.retained);
}

TEST(FilterRg1, PromptCarriesReflectionAndErroneousAnswer) {
  std::string seen;
  auto gw = responder_gateway([&](const llm::ChatRequest& req, Rng&) -> std::string {
    if (tag_ordinal(req.tag) == 0) seen = req.prompt_text();
    EXPECT_DOUBLE_EQ(req.params.temperature, 0.7);
    return "Answer: C";
  }, 1);
  auto d = rg1_draft();
  assess_instance(d, mcq(), {}, gw, catalog());
  EXPECT_NE(seen.find(d.question), std::string::npos);
  EXPECT_NE(seen.find(d.answer), std::string::npos);
  EXPECT_NE(seen.find(d.pinpoint.erroneous_text), std::string::npos);
  EXPECT_NE(seen.find("(C) clopidogrel"), std::string::npos);
}

TEST(FilterRg1, GatewayErrorsAndUnparsedAreFailedTrials) {
  auto gw = responder_gateway([](const llm::ChatRequest& req, Rng&) -> std::string {
    const auto t = tag_ordinal(req.tag);
    if (t < 2) throw Error(ErrorCode::ClientError, "boom");
    if (t == 2) return "I am not sure.";
    return "Therefore, the answer is (C).";
  });
  auto v = assess_instance(rg1_draft(), mcq(), {}, gw, catalog());
  EXPECT_EQ(v.successes, 7);
  EXPECT_TRUE(v.retained);
  EXPECT_EQ(v.per_trial[0].outcome, TrialOutcome::gateway_error);
  EXPECT_EQ(v.per_trial[2].outcome, TrialOutcome::unparsed);
}

TEST(FilterParamsTest, Validation) {
  auto gw = responder_gateway(answer_rg1([](std::size_t) { return true; }));
  FilterParams p;
  p.trials = 0;
  EXPECT_THROW(assess_instance(rg1_draft(), mcq(), p, gw, catalog()), Error);
  p.trials = 4;
  p.retain_threshold = 5;
  EXPECT_THROW(assess_instance(rg1_draft(), mcq(), p, gw, catalog()), Error);
  p.retain_threshold = 0;
  EXPECT_THROW(check(p), Error);
  EXPECT_THROW(assess_instance(rg1_draft(), consult(), {}, gw, catalog()), Error);
}

TEST(FilterProperty, RetainedIffThresholdMet) {
  Rng rng(11);
  for (int iter = 0; iter < 60; ++iter) {
    FilterParams p;
    p.trials = 1 + static_cast<int>(rng.index(12));
    p.retain_threshold = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(p.trials)));
    const double prob = rng.uniform();
    auto gw = responder_gateway(bernoulli_rg1(prob), 4, rng.next());
    auto v = assess_instance(rg1_draft(), mcq(), p, gw, catalog());
    ASSERT_EQ(v.trials, p.trials);
    ASSERT_GE(v.successes, 0);
    ASSERT_LE(v.successes, v.trials);
    int counted = 0;
    for (const auto& t : v.per_trial) counted += t.ok();
    ASSERT_EQ(counted, v.successes);
    ASSERT_EQ(v.retained, v.successes >= p.retain_threshold);
  }
}

TEST(EntityAtMask, Oracle) {
  const std::string orig = "Give amoxicillin twice daily for seven days.";
  EXPECT_EQ(entity_at_mask(orig, "amoxicillin", "Give amoxicillin twice daily for seven days."),
            "amoxicillin");
  EXPECT_EQ(entity_at_mask(orig, "amoxicillin", "give Ibuprofen twice daily for seven days"),
            "ibuprofen");
  EXPECT_EQ(entity_at_mask(orig, "amoxicillin", "Give amoxicillin clavulanate twice daily for seven days."),
            "amoxicillin clavulanate");
  EXPECT_EQ(entity_at_mask(orig, "amoxicillin", "Give twice daily for seven days."), "");
  EXPECT_EQ(entity_at_mask(orig, "amoxicillin", "Take amoxicillin for a week."), std::nullopt);
  EXPECT_EQ(entity_at_mask(orig, "cefalexin", orig), std::nullopt);
}

TEST(FilterRg2, FixedEntityCountsAndJudgeDecidesSynonyms) {
  // Trials 0-3 restore the entity, 4-5 use a synonym the judge accepts,
  // 6-7 keep the wrong fill, 8 rephrases around the right entity, 9 rephrases
  // keeping both.
  int judge_calls = 0;
  auto gw = responder_gateway([&](const llm::ChatRequest& req, Rng&) -> std::string {
    const auto task = task_of(req.tag);
    if (task == task::judge) {
      ++judge_calls;
      return "Yes.";
    }
    switch (tag_ordinal(req.tag)) {
      case 0: case 1: case 2: case 3: return "Give amoxicillin twice daily for seven days.";
      case 4: case 5: return "Give Amoxil twice daily for seven days.";
      case 6: case 7: return "Give ibuprofen twice daily for seven days.";
      case 8: return "A seven day course of amoxicillin is advised.";
      default: return "Use amoxicillin or ibuprofen for a week.";
    }
  }, 1);
  auto v = assess_instance(rg2_draft(1, "amoxicillin", "ibuprofen"), consult(), {}, gw, catalog());
  EXPECT_EQ(judge_calls, 2);
  EXPECT_EQ(v.successes, 7);
  EXPECT_TRUE(v.retained);
  EXPECT_TRUE(v.per_trial[4].judged);
  EXPECT_EQ(v.per_trial[4].decision, "amoxil");
  EXPECT_EQ(v.per_trial[6].outcome, TrialOutcome::wrong);
  EXPECT_EQ(v.per_trial[9].outcome, TrialOutcome::wrong);
}

TEST(FilterRg2, JudgeDownCountsAsFailedTrial) {
  auto gw = responder_gateway([&](const llm::ChatRequest& req, Rng&) -> std::string {
    if (task_of(req.tag) == task::judge) throw Error(ErrorCode::ClientError, "down");
    return tag_ordinal(req.tag) < 6 ? "Give amoxicillin twice daily for seven days."
                                    : "Give Amoxil twice daily for seven days.";
  });
  auto v = assess_instance(rg2_draft(1, "amoxicillin", "ibuprofen"), consult(), {}, gw, catalog());
  EXPECT_EQ(v.successes, 6);
  EXPECT_EQ(v.per_trial[7].outcome, TrialOutcome::judge_unavailable);
}

TEST(FilterDataset, SummaryAndRetainedSet) {
  auto gw = responder_gateway([](const llm::ChatRequest& req, Rng&) -> std::string {
    if (task_of(req.tag) == task::filter_rg1) return "Therefore, the answer is (C).";
    // RG2 drafts on step 1 are fixed, on step 2 not.
    if (req.prompt_text().find("Aspirin will ease") != std::string::npos) {
      return "Aspirin will ease the fever.";
    }
    return "Give amoxicillin twice daily for seven days.";
  });
  std::vector<ReflectionDraft> drafts = {rg2_draft(1, "amoxicillin", "ibuprofen"), rg1_draft(),
                                         rg2_draft(2, "Paracetamol", "Aspirin")};
  auto r = filter_dataset(drafts, {mcq(), consult()}, {}, gw, catalog());
  ASSERT_EQ(r.verdicts.size(), 3u);
  ASSERT_EQ(r.retained.size(), 2u);
  EXPECT_EQ(r.retained[0].id(), drafts[0].id());
  EXPECT_EQ(r.retained[1].id(), drafts[1].id());
  EXPECT_EQ(r.summary.total.assessed, 3u);
  EXPECT_EQ(r.summary.by_pathway.at("RG2").retained, 1u);
  EXPECT_EQ(r.summary.by_source.at("multichoice").retained, 1u);
  EXPECT_EQ(r.summary.by_source.at("consultation").assessed, 2u);
  for (const auto& v : r.verdicts) EXPECT_EQ(verdict_from_json(to_json(v)), v);
  const auto j = to_json(r.summary);
  EXPECT_DOUBLE_EQ(j["by_pathway"]["RG2"]["rate"].get<double>(), 0.5);
  EXPECT_THROW(filter_dataset(drafts, {mcq()}, {}, gw, catalog()), Error);
}

TEST(FilterDataset, SeededBernoulliTracksBinomialTail) {
  // 2000 instances: the standard error of the retention rate is about 0.011.
  std::vector<QARecord> recs;
  std::vector<ReflectionDraft> drafts;
  for (int i = 0; i < 2000; ++i) {
    auto d = rg1_draft();
    d.pinpoint.id = "mcq:000001#RG1-" + std::to_string(i);
    drafts.push_back(d);
  }
  auto gw = responder_gateway(bernoulli_rg1(0.5), 8, 2024);
  auto r = filter_dataset(drafts, {mcq()}, {}, gw, catalog());
  EXPECT_NEAR(r.summary.total.rate(), binomial_tail(10, 6, 0.5), 0.035);
  auto again = filter_dataset(drafts, {mcq()}, {}, gw, catalog());
  EXPECT_EQ(again.verdicts, r.verdicts);
}
