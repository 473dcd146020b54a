#include <gtest/gtest.h>

#include "reflectforge/error.hpp"
#include "reflectforge/text.hpp"
#include "reflectforge/trajectory.hpp"
#include "support/generators.hpp"

using namespace reflectforge;

namespace {

Trajectory three_steps() {
  return Trajectory::from_sentences(
      "q1", {"S1 first step.", "S2 second step.", "S3 third step."},
      "The answer is (C).");
}

ReflectiveTrajectory one_triple() {
  return assemble_reflective(three_steps(), 1, "E wrong step.",
                             {"What is true?", "Truth is known.", 0},
                             "S2' repaired step.");
}

std::size_t count(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos;
       pos = hay.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

ErrorCode parse_error(std::string_view s, Grammar g = Grammar::full) {
  try {
    parse_training_text(s, {}, g);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected parse failure for: " << s;
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(AssembleTest, SplicesTripleAtPinpoint) {
  auto t = one_triple();
  ASSERT_EQ(t.segments.size(), 5u);
  EXPECT_EQ(std::get<Step>(t.segments[0]),
            (Step{0, "S1 first step.", StepKind::original}));
  EXPECT_EQ(std::get<Step>(t.segments[1]),
            (Step{1, "E wrong step.", StepKind::erroneous}));
  EXPECT_EQ(std::get<ReflectionPair>(t.segments[2]).question, "What is true?");
  EXPECT_EQ(std::get<ReflectionPair>(t.segments[2]).pinpoint_index, 1u);
  EXPECT_EQ(std::get<Step>(t.segments[3]),
            (Step{1, "S2' repaired step.", StepKind::corrected}));
  EXPECT_EQ(std::get<Step>(t.segments[4]),
            (Step{2, "S3 third step.", StepKind::original}));
  EXPECT_EQ(t.answer, "The answer is (C).");
  EXPECT_TRUE(validate(t).empty());
}

TEST(AssembleTest, SingleStepTrajectory) {
  auto base = Trajectory::from_sentences("q", {"S1."}, "A.");
  auto t = assemble_reflective(base, 0, "E.", {"Rq?", "Ra.", 0}, "S1'.");
  ASSERT_EQ(t.segments.size(), 3u);
  EXPECT_EQ(std::get<Step>(t.segments[0]).kind, StepKind::erroneous);
  EXPECT_EQ(std::get<Step>(t.segments[2]).kind, StepKind::corrected);
  EXPECT_TRUE(validate(t).empty());
}

TEST(AssembleTest, Errors) {
  auto base = three_steps();
  try {
    assemble_reflective(base, 3, "E.", {"q?", "a.", 0}, "C.");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IndexOutOfRange);
  }
  try {
    assemble_reflective(base, 0, "Same text.", {"q?", "a.", 0}, " Same   text.");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateCorrection);
  }
}

TEST(AssembleTest, MultiplePinpointsInOrder) {
  Trajectory base = Trajectory::from_sentences("q", {"a.", "b.", "c.", "d."}, "A.");
  std::vector<ReflectionEdit> edits = {
      {3, "d-wrong.", {"q3?", "a3.", 0}, "d-fixed."},
      {0, "a-wrong.", {"q0?", "a0.", 0}, "a-fixed."},
  };
  auto t = assemble_reflective(base, edits);
  EXPECT_EQ(t.reflection_count(), 2u);
  EXPECT_TRUE(validate(t).empty());
  EXPECT_EQ(std::get<ReflectionPair>(t.segments[1]).pinpoint_index, 0u);
  EXPECT_EQ(std::get<ReflectionPair>(t.segments[6]).pinpoint_index, 3u);
}

TEST(SerializeTest, LayoutOfOneTriple) {
  const auto s = serialize_training_text(one_triple());
  EXPECT_EQ(s,
            "S1 first step.\n"
            "E wrong step. <Think>Question: What is true?\nAnswer: Truth is "
            "known.</Think> <Modified>S2' repaired step.</Modified>\n"
            "S3 third step.\n"
            "The answer is (C).");
  EXPECT_EQ(count(s, "<Think>"), 1u);
  EXPECT_EQ(count(s, "<Modified>"), 1u);
  EXPECT_LT(s.find("</Think>"), s.find("<Modified>"));
}

TEST(SerializeTest, ThreeTriplesBalanced) {
  Rng rng(3);
  auto t = test_support::random_reflective(rng, 3);
  ASSERT_EQ(t.reflection_count(), 3u);
  const auto s = serialize_training_text(t);
  for (auto tok : SpecialTokens{}.all()) EXPECT_EQ(count(s, tok), 3u) << tok;
}

TEST(SerializeTest, TokenCollision) {
  auto base = Trajectory::from_sentences("q", {"we <Think> here.", "S2."}, "A.");
  auto t = assemble_reflective(base, 1, "E.", {"q?", "a.", 0}, "C.");
  try {
    serialize_training_text(t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TokenCollision);
  }
}

TEST(SerializeTest, CustomTokens) {
  SpecialTokens tok{"[T]", "[/T]", "[M]", "[/M]"};
  const auto s = serialize_training_text(one_triple(), tok);
  EXPECT_NE(s.find("[T]Question:"), std::string::npos);
  auto back = parse_training_text(s, tok);
  EXPECT_TRUE(structurally_equal(back, one_triple()));
}

TEST(ParseTest, RoundTripRandomized) {
  Rng rng(2024);
  for (int i = 0; i < 300; ++i) {
    auto t = test_support::random_reflective(rng, 1 + rng.index(3));
    ASSERT_TRUE(validate(t).empty());
    auto back = parse_training_text(serialize_training_text(t));
    ASSERT_TRUE(structurally_equal(back, t)) << serialize_training_text(t);
    // Parsed values are already canonical.
    EXPECT_EQ(back, normalized(back));
  }
}

TEST(ParseTest, RejectsMalformed) {
  EXPECT_EQ(parse_error("S1\nE </Think> x <Think>Question: q\nAnswer: a</Think> "
                        "<Modified>c</Modified>\nA"),
            ErrorCode::UnbalancedTokens);
  EXPECT_EQ(parse_error("E <Think>Question: q\nAnswer: a</Think>\nA"),
            ErrorCode::GrammarViolation);
  EXPECT_EQ(parse_error("S1\n<Modified>c</Modified>\nA"), ErrorCode::GrammarViolation);
  EXPECT_EQ(parse_error("E <Think></Think> <Modified>c</Modified>\nA"),
            ErrorCode::EmptySegment);
  EXPECT_EQ(parse_error("E <Think>Question: q\nAnswer: a</Think> <Modified>c</Modified>"),
            ErrorCode::EmptySegment);
  EXPECT_EQ(parse_error("<Think>Question: q\nAnswer: a</Think> <Modified>c</Modified>\nA"),
            ErrorCode::EmptySegment);
  EXPECT_EQ(parse_error("E <Think>Question: q</Think> <Modified>c</Modified>\nA"),
            ErrorCode::GrammarViolation);
  EXPECT_EQ(parse_error("just a plain answer"), ErrorCode::GrammarViolation);
}

TEST(ParseTest, PartialAndPlainGrammars) {
  auto q_only = parse_training_text(
      "E <Think>Question: why?</Think> <Modified>c</Modified>\nA", {},
      Grammar::partial);
  EXPECT_EQ(std::get<ReflectionPair>(q_only.segments[1]).answer, "");
  auto plain = parse_training_text("s1\ns2\nA", {}, Grammar::plain);
  EXPECT_EQ(plain.segments.size(), 2u);
  EXPECT_EQ(plain.answer, "A");
  EXPECT_EQ(parse_error("E <Think>Question: q\nAnswer: a</Think> <Modified>c</Modified>\nA",
                        Grammar::plain),
            ErrorCode::GrammarViolation);
}

TEST(ValidateTest, ReportsOrphanReflection) {
  auto t = one_triple();
  t.segments.erase(t.segments.begin() + 3);  // drop the corrected step
  auto report = validate(t);
  ASSERT_EQ(report.size(), 2u);
  EXPECT_EQ(report[0].segment_index, 2u);
  EXPECT_EQ(report[0].kind, ViolationKind::missing_correction);
  EXPECT_EQ(report[1].kind, ViolationKind::no_reflection);
}

TEST(ValidateTest, LeakageOfQuestion) {
  const std::string q =
      "A 45-year-old man presents with crushing chest pain radiating to the arm.";
  auto t = one_triple();
  std::get<ReflectionPair>(t.segments[2]).answer =
      "Consider crushing chest pain radiating somewhere.";  // 20+ shared chars
  ValidateOptions opt;
  opt.question = q;
  auto report = validate(t, opt);
  ASSERT_EQ(report.size(), 1u);
  EXPECT_EQ(report[0].kind, ViolationKind::leakage);
  EXPECT_EQ(report[0].segment_index, 2u);
  EXPECT_TRUE(validate(one_triple(), opt).empty());
}

TEST(ValidateTest, IndexOrderAndEmptyAnswer) {
  auto t = one_triple();
  std::get<Step>(t.segments[4]).index = 0;
  t.answer = "  ";
  auto report = validate(t);
  ASSERT_EQ(report.size(), 2u);
  EXPECT_EQ(report[0].kind, ViolationKind::index_order);
  EXPECT_EQ(report[1].kind, ViolationKind::empty_answer);
}

TEST(AblationTest, Projections) {
  auto t = one_triple();
  EXPECT_EQ(project_ablation(t, AblationMode::full), t);

  auto nr = project_ablation(t, AblationMode::no_reflect);
  ASSERT_EQ(nr.segments.size(), 4u);
  EXPECT_EQ(std::get<Step>(nr.segments[1]).kind, StepKind::erroneous);
  EXPECT_EQ(std::get<Step>(nr.segments[2]).kind, StepKind::corrected);
  auto nr_text = serialize_training_text(nr);
  EXPECT_EQ(nr_text.find("<Think>"), std::string::npos);
  EXPECT_EQ(nr_text, "S1 first step.\nE wrong step.\nS2' repaired step.\nS3 third step.\nThe answer is (C).");

  auto qo = serialize_training_text(project_ablation(t, AblationMode::question_only));
  EXPECT_NE(qo.find("<Think>Question: What is true?</Think>"), std::string::npos);
  EXPECT_EQ(qo.find("Answer:"), std::string::npos);

  auto ao = serialize_training_text(project_ablation(t, AblationMode::answer_only));
  EXPECT_NE(ao.find("<Think>Answer: Truth is known.</Think>"), std::string::npos);
  EXPECT_EQ(ao.find("Question:"), std::string::npos);

  auto orig = project_ablation(t, AblationMode::original);
  EXPECT_EQ(serialize_training_text(orig),
            "S1 first step.\nS2' repaired step.\nS3 third step.\nThe answer is (C).");
  EXPECT_EQ(to_trajectory(t).steps.size(), 3u);
}

TEST(AblationTest, MonotoneLengthsAndGrammarClosure) {
  Rng rng(77);
  for (int i = 0; i < 200; ++i) {
    auto t = test_support::random_reflective(rng, 1 + rng.index(3));
    auto len = [&](AblationMode m) {
      return serialize_training_text(project_ablation(t, m)).size();
    };
    const auto full = len(AblationMode::full);
    const auto qo = len(AblationMode::question_only);
    const auto ao = len(AblationMode::answer_only);
    const auto nr = len(AblationMode::no_reflect);
    EXPECT_GE(full, qo);
    EXPECT_GE(qo, nr);
    EXPECT_GE(full, ao);
    EXPECT_GE(ao, nr);
    for (auto mode : kAllAblationModes) {
      auto p = project_ablation(t, mode);
      ValidateOptions opt;
      opt.grammar = grammar_for(mode);
      EXPECT_TRUE(validate(p, opt).empty()) << to_string(mode);
      auto back = parse_training_text(serialize_training_text(p), {}, grammar_for(mode));
      if (opt.grammar != Grammar::plain) {
        EXPECT_TRUE(structurally_equal(back, p)) << to_string(mode);
      } else {
        EXPECT_EQ(p.reflection_count(), 0u);
        EXPECT_EQ(back.reflection_count(), 0u);
      }
    }
  }
}

TEST(TokensTest, DefaultsAndDuplicates) {
  SpecialTokens tok;
  EXPECT_EQ(tok.think_open, "<Think>");
  EXPECT_EQ(tok.think_close, "</Think>");
  EXPECT_EQ(tok.modified_open, "<Modified>");
  EXPECT_EQ(tok.modified_close, "</Modified>");
  EXPECT_NO_THROW(tok.check());
  tok.modified_open = "<Think>";
  EXPECT_THROW(tok.check(), Error);
}

TEST(CountThinkBlocksTest, Counts) {
  EXPECT_EQ(count_think_blocks("a <Think>x</Think> b"), 1u);
  EXPECT_EQ(count_think_blocks("plain"), 0u);
  EXPECT_EQ(count_think_blocks("<Think>a</Think><Think>b</Think><Think>c</Think>"), 3u);
  EXPECT_FALSE(count_think_blocks("<Think>a").has_value());
  EXPECT_FALSE(count_think_blocks("</Think>a<Think>").has_value());
}
