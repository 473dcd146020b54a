#include "reflectforge/trajectory.hpp"

#include <algorithm>
#include <cctype>

#include "reflectforge/error.hpp"
#include "reflectforge/text.hpp"

namespace reflectforge {

namespace {

constexpr std::string_view kQuestionLabel = "Question:";
constexpr std::string_view kAnswerLabel = "Answer:";

enum class PieceKind { text, think_open, think_close, modified_open, modified_close };

struct Piece {
  PieceKind kind;
  std::string_view text;  // only for PieceKind::text
};

std::vector<Piece> lex(std::string_view s, const SpecialTokens& tokens) {
  struct Literal {
    std::string_view value;
    PieceKind kind;
  };
  std::array<Literal, 4> literals = {{
      {tokens.think_open, PieceKind::think_open},
      {tokens.think_close, PieceKind::think_close},
      {tokens.modified_open, PieceKind::modified_open},
      {tokens.modified_close, PieceKind::modified_close},
  }};
  // Longest first so that a token that prefixes another never shadows it.
  std::stable_sort(literals.begin(), literals.end(),
                   [](const Literal& a, const Literal& b) {
                     return a.value.size() > b.value.size();
                   });

  std::vector<Piece> pieces;
  std::size_t text_start = 0;
  std::size_t i = 0;
  while (i < s.size()) {
    const Literal* hit = nullptr;
    for (const auto& lit : literals) {
      if (!lit.value.empty() && s.compare(i, lit.value.size(), lit.value) == 0) {
        hit = &lit;
        break;
      }
    }
    if (!hit) {
      ++i;
      continue;
    }
    if (i > text_start) {
      pieces.push_back({PieceKind::text, s.substr(text_start, i - text_start)});
    }
    pieces.push_back({hit->kind, {}});
    i += hit->value.size();
    text_start = i;
  }
  if (text_start < s.size()) {
    pieces.push_back({PieceKind::text, s.substr(text_start)});
  }
  return pieces;
}

// Blocks may not nest and every close needs the matching open.
std::optional<std::string> balance_error(const std::vector<Piece>& pieces) {
  enum class Open { none, think, modified } open = Open::none;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    switch (pieces[i].kind) {
      case PieceKind::text:
        break;
      case PieceKind::think_open:
      case PieceKind::modified_open:
        if (open != Open::none) return "block opened inside another block";
        open = pieces[i].kind == PieceKind::think_open ? Open::think
                                                       : Open::modified;
        break;
      case PieceKind::think_close:
        if (open != Open::think) return "think close without matching open";
        open = Open::none;
        break;
      case PieceKind::modified_close:
        if (open != Open::modified) return "modified close without matching open";
        open = Open::none;
        break;
    }
  }
  if (open != Open::none) return "unclosed block at end of text";
  return std::nullopt;
}

std::vector<std::string> nonblank_lines(std::string_view chunk) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= chunk.size()) {
    auto nl = chunk.find('\n', start);
    auto end = nl == std::string_view::npos ? chunk.size() : nl;
    auto line = text::collapse_whitespace(chunk.substr(start, end - start));
    if (!line.empty()) lines.push_back(std::move(line));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return lines;
}

std::string render_think_body(const ReflectionPair& pair) {
  const std::string q = text::collapse_whitespace(pair.question);
  const std::string a = text::collapse_whitespace(pair.answer);
  std::string body;
  if (!q.empty()) {
    body.append(kQuestionLabel).append(" ").append(q);
  }
  if (!a.empty()) {
    if (!body.empty()) body.push_back('\n');
    body.append(kAnswerLabel).append(" ").append(a);
  }
  return body;
}

ReflectionPair parse_think_body(std::string_view body, Grammar grammar) {
  const std::string trimmed = text::trim(body);
  if (trimmed.empty()) {
    throw Error(ErrorCode::EmptySegment, "empty think block");
  }
  std::string_view rest(trimmed);
  ReflectionPair pair;
  bool has_question = false;
  bool has_answer = false;
  if (rest.starts_with(kQuestionLabel)) {
    has_question = true;
    rest.remove_prefix(kQuestionLabel.size());
    auto split = rest.find(std::string("\n").append(kAnswerLabel));
    if (split == std::string_view::npos) {
      pair.question = text::collapse_whitespace(rest);
    } else {
      pair.question = text::collapse_whitespace(rest.substr(0, split));
      has_answer = true;
      pair.answer = text::collapse_whitespace(
          rest.substr(split + 1 + kAnswerLabel.size()));
    }
  } else if (rest.starts_with(kAnswerLabel)) {
    has_answer = true;
    pair.answer = text::collapse_whitespace(rest.substr(kAnswerLabel.size()));
  } else {
    throw Error(ErrorCode::GrammarViolation,
                "think block must start with a Question: or Answer: line");
  }
  if ((has_question && pair.question.empty()) ||
      (has_answer && pair.answer.empty())) {
    throw Error(ErrorCode::EmptySegment, "empty question or answer line");
  }
  if (grammar == Grammar::full && !(has_question && has_answer)) {
    throw Error(ErrorCode::GrammarViolation,
                "think block must carry both a question and an answer");
  }
  return pair;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isspace(c) != 0;
  });
}

void check_collision(std::string_view s, const SpecialTokens& tokens,
                     std::string_view where) {
  if (auto hit = tokens.find_in(s)) {
    throw Error(ErrorCode::TokenCollision,
                std::string(where) + " contains special token " +
                    std::string(*hit));
  }
}

}  // namespace

std::string_view to_string(StepKind kind) noexcept {
  switch (kind) {
    case StepKind::original: return "original";
    case StepKind::erroneous: return "erroneous";
    case StepKind::corrected: return "corrected";
  }
  return "original";
}

std::string_view to_string(AblationMode mode) noexcept {
  switch (mode) {
    case AblationMode::full: return "full";
    case AblationMode::no_reflect: return "no_reflect";
    case AblationMode::question_only: return "question_only";
    case AblationMode::answer_only: return "answer_only";
    case AblationMode::original: return "original";
  }
  return "full";
}

std::optional<AblationMode> parse_ablation_mode(std::string_view s) {
  for (auto mode : kAllAblationModes) {
    if (to_string(mode) == s) return mode;
  }
  return std::nullopt;
}

Grammar grammar_for(AblationMode mode) noexcept {
  switch (mode) {
    case AblationMode::full: return Grammar::full;
    case AblationMode::question_only:
    case AblationMode::answer_only: return Grammar::partial;
    case AblationMode::no_reflect:
    case AblationMode::original: return Grammar::plain;
  }
  return Grammar::full;
}

std::string_view to_string(ViolationKind kind) noexcept {
  switch (kind) {
    case ViolationKind::empty_text: return "empty_text";
    case ViolationKind::empty_answer: return "empty_answer";
    case ViolationKind::empty_reflection: return "empty_reflection";
    case ViolationKind::orphan_reflection: return "orphan_reflection";
    case ViolationKind::missing_reflection: return "missing_reflection";
    case ViolationKind::missing_correction: return "missing_correction";
    case ViolationKind::orphan_correction: return "orphan_correction";
    case ViolationKind::no_reflection: return "no_reflection";
    case ViolationKind::unexpected_reflection: return "unexpected_reflection";
    case ViolationKind::index_order: return "index_order";
    case ViolationKind::pinpoint_mismatch: return "pinpoint_mismatch";
    case ViolationKind::token_collision: return "token_collision";
    case ViolationKind::leakage: return "leakage";
  }
  return "unknown";
}

Trajectory Trajectory::from_sentences(std::string question_id,
                                      const std::vector<std::string>& sentences,
                                      std::string answer) {
  Trajectory t;
  t.question_id = std::move(question_id);
  t.steps.reserve(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    t.steps.push_back({i, sentences[i], StepKind::original});
  }
  t.answer = std::move(answer);
  return t;
}

bool Trajectory::is_erroneous() const {
  return std::any_of(steps.begin(), steps.end(), [](const Step& s) {
    return s.kind == StepKind::erroneous;
  });
}

std::vector<std::string> Trajectory::step_texts() const {
  std::vector<std::string> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.text);
  return out;
}

std::size_t ReflectiveTrajectory::reflection_count() const {
  return static_cast<std::size_t>(
      std::count_if(segments.begin(), segments.end(), [](const Segment& s) {
        return std::holds_alternative<ReflectionPair>(s);
      }));
}

void SpecialTokens::check() const {
  auto values = all();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].empty()) {
      throw Error(ErrorCode::InvalidArgument, "special token must be non-empty");
    }
    for (std::size_t j = i + 1; j < values.size(); ++j) {
      if (values[i] == values[j]) {
        throw Error(ErrorCode::InvalidArgument,
                    "duplicate special token " + std::string(values[i]));
      }
    }
  }
}

std::optional<std::string_view> SpecialTokens::find_in(std::string_view s) const {
  for (auto tok : all()) {
    if (!tok.empty() && s.find(tok) != std::string_view::npos) return tok;
  }
  return std::nullopt;
}

ReflectiveTrajectory assemble_reflective(const Trajectory& base,
                                         std::size_t pinpoint_index,
                                         std::string erroneous_text,
                                         ReflectionPair reflection,
                                         std::string corrected_text) {
  std::vector<ReflectionEdit> edits;
  edits.push_back({pinpoint_index, std::move(erroneous_text),
                   std::move(reflection), std::move(corrected_text)});
  return assemble_reflective(base, std::move(edits));
}

ReflectiveTrajectory assemble_reflective(const Trajectory& base,
                                         std::vector<ReflectionEdit> edits) {
  if (edits.empty()) {
    throw Error(ErrorCode::InvalidArgument, "at least one reflection edit required");
  }
  std::sort(edits.begin(), edits.end(), [](const auto& a, const auto& b) {
    return a.pinpoint_index < b.pinpoint_index;
  });
  for (std::size_t i = 0; i < edits.size(); ++i) {
    const auto& e = edits[i];
    if (e.pinpoint_index >= base.steps.size()) {
      throw Error(ErrorCode::IndexOutOfRange,
                  "pinpoint index " + std::to_string(e.pinpoint_index) +
                      " outside " + std::to_string(base.steps.size()) + " steps");
    }
    if (i > 0 && edits[i - 1].pinpoint_index == e.pinpoint_index) {
      throw Error(ErrorCode::InvalidArgument,
                  "two edits target step " + std::to_string(e.pinpoint_index));
    }
    if (text::collapse_whitespace(e.erroneous_text) ==
        text::collapse_whitespace(e.corrected_text)) {
      throw Error(ErrorCode::DegenerateCorrection,
                  "corrected text equals erroneous text at step " +
                      std::to_string(e.pinpoint_index));
    }
  }

  ReflectiveTrajectory out;
  out.question_id = base.question_id;
  out.answer = base.answer;
  auto edit = edits.begin();
  for (std::size_t i = 0; i < base.steps.size(); ++i) {
    if (edit != edits.end() && edit->pinpoint_index == i) {
      out.segments.emplace_back(Step{i, std::move(edit->erroneous_text),
                                     StepKind::erroneous});
      edit->reflection.pinpoint_index = i;
      out.segments.emplace_back(std::move(edit->reflection));
      out.segments.emplace_back(Step{i, std::move(edit->corrected_text),
                                     StepKind::corrected});
      ++edit;
      continue;
    }
    Step s = base.steps[i];
    s.kind = StepKind::original;
    out.segments.emplace_back(std::move(s));
  }
  return out;
}

std::string serialize_training_text(const ReflectiveTrajectory& t,
                                     const SpecialTokens& tokens) {
  tokens.check();
  std::vector<std::string> lines;
  const auto& segs = t.segments;
  auto step_text = [&](const Step& s) {
    check_collision(s.text, tokens, "step " + std::to_string(s.index));
    std::string body = text::collapse_whitespace(s.text);
    if (body.empty()) {
      throw Error(ErrorCode::EmptySegment,
                  "step " + std::to_string(s.index) + " is empty");
    }
    return body;
  };

  for (std::size_t i = 0; i < segs.size(); ++i) {
    if (std::holds_alternative<ReflectionPair>(segs[i])) {
      throw Error(ErrorCode::GrammarViolation,
                  "reflection at segment " + std::to_string(i) +
                      " is not preceded by an erroneous step");
    }
    const auto& step = std::get<Step>(segs[i]);
    const bool opens_triple =
        step.kind == StepKind::erroneous && i + 1 < segs.size() &&
        std::holds_alternative<ReflectionPair>(segs[i + 1]);
    if (!opens_triple) {
      lines.push_back(step_text(step));
      continue;
    }
    const auto& pair = std::get<ReflectionPair>(segs[i + 1]);
    if (i + 2 >= segs.size() || !std::holds_alternative<Step>(segs[i + 2]) ||
        std::get<Step>(segs[i + 2]).kind != StepKind::corrected) {
      throw Error(ErrorCode::GrammarViolation,
                  "reflection at segment " + std::to_string(i + 1) +
                      " is not followed by a corrected step");
    }
    const auto& corrected = std::get<Step>(segs[i + 2]);
    check_collision(pair.question, tokens, "reflection question");
    check_collision(pair.answer, tokens, "reflection answer");
    std::string body = render_think_body(pair);
    if (body.empty()) {
      throw Error(ErrorCode::EmptySegment,
                  "reflection at segment " + std::to_string(i + 1) + " is empty");
    }
    std::string line = step_text(step);
    line.append(" ")
        .append(tokens.think_open)
        .append(body)
        .append(tokens.think_close)
        .append(" ")
        .append(tokens.modified_open)
        .append(step_text(corrected))
        .append(tokens.modified_close);
    lines.push_back(std::move(line));
    i += 2;
  }
  check_collision(t.answer, tokens, "answer");
  std::string answer = text::collapse_whitespace(t.answer);
  if (answer.empty()) throw Error(ErrorCode::EmptySegment, "answer is empty");
  lines.push_back(std::move(answer));
  return text::join(lines, "\n");
}

ReflectiveTrajectory parse_training_text(std::string_view s,
                                         const SpecialTokens& tokens,
                                         Grammar grammar) {
  tokens.check();
  const auto pieces = lex(s, tokens);
  if (auto err = balance_error(pieces)) {
    throw Error(ErrorCode::UnbalancedTokens, *err);
  }

  ReflectiveTrajectory out;
  std::size_t next_index = 0;
  auto push_original = [&](std::string text) {
    out.segments.emplace_back(
        Step{next_index++, std::move(text), StepKind::original});
  };

  std::string chunk;  // plain text since the last block
  std::size_t i = 0;
  // pieces[i] is an open token; returns the body and leaves i on the close
  // token, which the balance check guarantees is next.
  auto block_body = [&]() -> std::string_view {
    std::string_view body;
    if (i + 1 < pieces.size() && pieces[i + 1].kind == PieceKind::text) {
      body = pieces[i + 1].text;
      ++i;
    }
    ++i;
    return body;
  };

  while (i < pieces.size()) {
    const Piece& p = pieces[i];
    if (p.kind == PieceKind::text) {
      chunk.append(p.text);
      ++i;
      continue;
    }
    if (p.kind == PieceKind::modified_open) {
      throw Error(ErrorCode::GrammarViolation,
                  "modified block without a preceding think block");
    }
    // Only think_open can appear here; closes were ruled out by balance.
    if (grammar == Grammar::plain) {
      throw Error(ErrorCode::GrammarViolation,
                  "think block not allowed in plain text");
    }
    std::string_view chunk_view(chunk);
    auto last_nl = chunk_view.rfind('\n');
    std::string_view head = last_nl == std::string_view::npos
                                ? std::string_view{}
                                : chunk_view.substr(0, last_nl);
    std::string erroneous = text::collapse_whitespace(
        last_nl == std::string_view::npos ? chunk_view
                                          : chunk_view.substr(last_nl + 1));
    for (auto& line : nonblank_lines(head)) push_original(std::move(line));
    chunk.clear();
    if (erroneous.empty()) {
      throw Error(ErrorCode::EmptySegment,
                  "think block has no erroneous step before it on its line");
    }

    ReflectionPair pair = parse_think_body(block_body(), grammar);
    ++i;  // past think close

    if (i < pieces.size() && pieces[i].kind == PieceKind::text) {
      if (!is_blank(pieces[i].text)) {
        throw Error(ErrorCode::GrammarViolation,
                    "text between think block and modified block");
      }
      ++i;
    }
    if (i >= pieces.size() || pieces[i].kind != PieceKind::modified_open) {
      throw Error(ErrorCode::GrammarViolation,
                  "think block not followed by a modified block");
    }
    std::string corrected =
        text::collapse_whitespace(block_body());
    ++i;  // past modified close
    if (corrected.empty()) {
      throw Error(ErrorCode::EmptySegment, "empty modified block");
    }
    if (i < pieces.size() && pieces[i].kind == PieceKind::text) {
      std::string_view tail = pieces[i].text;
      auto nl = tail.find('\n');
      if (!is_blank(tail.substr(0, nl == std::string_view::npos ? tail.size() : nl))) {
        throw Error(ErrorCode::GrammarViolation,
                    "text after modified block on the same line");
      }
    }

    const std::size_t index = next_index++;
    pair.pinpoint_index = index;
    out.segments.emplace_back(Step{index, std::move(erroneous), StepKind::erroneous});
    out.segments.emplace_back(std::move(pair));
    out.segments.emplace_back(Step{index, std::move(corrected), StepKind::corrected});
  }

  auto lines = nonblank_lines(chunk);
  if (lines.empty()) {
    throw Error(ErrorCode::EmptySegment, "missing final answer");
  }
  out.answer = std::move(lines.back());
  lines.pop_back();
  for (auto& line : lines) push_original(std::move(line));

  if (grammar != Grammar::plain && out.reflection_count() == 0) {
    throw Error(ErrorCode::GrammarViolation,
                "no erroneous/reflection/corrected triple found");
  }
  return out;
}

std::vector<Violation> validate(const ReflectiveTrajectory& t,
                                const ValidateOptions& options) {
  std::vector<Violation> out;
  auto report = [&](std::size_t idx, ViolationKind kind, std::string msg) {
    out.push_back({idx, kind, std::move(msg)});
  };
  const auto& segs = t.segments;
  std::optional<std::size_t> last_position;
  std::optional<std::size_t> open_triple;
  std::size_t triples = 0;

  for (std::size_t i = 0; i < segs.size(); ++i) {
    const Segment* prev = i > 0 ? &segs[i - 1] : nullptr;
    const Segment* next = i + 1 < segs.size() ? &segs[i + 1] : nullptr;
    auto prev_kind = [&]() -> std::optional<StepKind> {
      if (prev && std::holds_alternative<Step>(*prev)) return std::get<Step>(*prev).kind;
      return std::nullopt;
    };

    if (const auto* pair = std::get_if<ReflectionPair>(&segs[i])) {
      if (options.grammar == Grammar::plain) {
        report(i, ViolationKind::unexpected_reflection,
               "reflection not allowed in this grammar");
        continue;
      }
      if (prev_kind() != StepKind::erroneous) {
        report(i, ViolationKind::orphan_reflection,
               "reflection not preceded by an erroneous step");
      } else if (std::get<Step>(*prev).index != pair->pinpoint_index) {
        report(i, ViolationKind::pinpoint_mismatch,
               "reflection targets step " + std::to_string(pair->pinpoint_index) +
                   " but follows step " +
                   std::to_string(std::get<Step>(*prev).index));
      }
      const bool followed = next && std::holds_alternative<Step>(*next) &&
                            std::get<Step>(*next).kind == StepKind::corrected;
      if (!followed) {
        report(i, ViolationKind::missing_correction,
               "reflection not followed by a corrected step");
      }
      if (prev_kind() == StepKind::erroneous && followed) ++triples;

      const bool q_empty = text::trim(pair->question).empty();
      const bool a_empty = text::trim(pair->answer).empty();
      if (options.grammar == Grammar::full ? (q_empty || a_empty)
                                           : (q_empty && a_empty)) {
        report(i, ViolationKind::empty_reflection,
               "reflection question or answer is empty");
      }
      for (const auto* field : {&pair->question, &pair->answer}) {
        if (auto hit = options.tokens.find_in(*field)) {
          report(i, ViolationKind::token_collision,
                 "reflection contains special token " + std::string(*hit));
        }
      }
      if (options.question &&
          text::shares_substring(*options.question, pair->answer,
                                 options.leakage_min_length)) {
        report(i, ViolationKind::leakage,
               "reflection answer repeats the question verbatim");
      }
      continue;
    }

    const auto& step = std::get<Step>(segs[i]);
    if (text::trim(step.text).empty()) {
      report(i, ViolationKind::empty_text, "step text is empty");
    }
    if (auto hit = options.tokens.find_in(step.text)) {
      report(i, ViolationKind::token_collision,
             "step contains special token " + std::string(*hit));
    }

    switch (step.kind) {
      case StepKind::original:
        break;
      case StepKind::erroneous: {
        const bool next_is_pair = next && std::holds_alternative<ReflectionPair>(*next);
        if (options.grammar == Grammar::plain) {
          const bool next_corrected = next && std::holds_alternative<Step>(*next) &&
                                      std::get<Step>(*next).kind == StepKind::corrected;
          if (!next_corrected) {
            report(i, ViolationKind::missing_correction,
                   "erroneous step not followed by its correction");
          }
        } else if (!next_is_pair) {
          report(i, ViolationKind::missing_reflection,
                 "erroneous step not followed by a reflection");
        }
        break;
      }
      case StepKind::corrected: {
        if (options.grammar == Grammar::plain) {
          // A corrected step may stand alone (original projection) or follow
          // its erroneous step directly (no_reflect projection).
          if (prev_kind() == StepKind::erroneous &&
              std::get<Step>(*prev).index != step.index) {
            report(i, ViolationKind::pinpoint_mismatch,
                   "corrected step does not match the erroneous step");
          }
        } else if (!prev || !std::holds_alternative<ReflectionPair>(*prev)) {
          report(i, ViolationKind::orphan_correction,
                 "corrected step not preceded by a reflection");
        }
        break;
      }
    }

    // Step positions must increase; erroneous and corrected share one.
    if (step.kind == StepKind::corrected && open_triple) {
      if (step.index != *open_triple) {
        report(i, ViolationKind::pinpoint_mismatch,
               "corrected step index differs from its erroneous step");
      }
      open_triple.reset();
      continue;
    }
    if (last_position && step.index <= *last_position) {
      report(i, ViolationKind::index_order,
             "step index " + std::to_string(step.index) + " does not increase");
    }
    last_position = step.index;
    open_triple.reset();
    if (step.kind == StepKind::erroneous) open_triple = step.index;
  }

  if (options.grammar != Grammar::plain && triples == 0) {
    report(segs.size(), ViolationKind::no_reflection,
           "no erroneous/reflection/corrected triple");
  }
  if (text::trim(t.answer).empty()) {
    report(segs.size(), ViolationKind::empty_answer, "final answer is empty");
  } else if (auto hit = options.tokens.find_in(t.answer)) {
    report(segs.size(), ViolationKind::token_collision,
           "answer contains special token " + std::string(*hit));
  }
  return out;
}

ReflectiveTrajectory project_ablation(const ReflectiveTrajectory& t,
                                      AblationMode mode) {
  ReflectiveTrajectory out;
  out.question_id = t.question_id;
  out.answer = t.answer;
  for (const auto& seg : t.segments) {
    if (const auto* pair = std::get_if<ReflectionPair>(&seg)) {
      switch (mode) {
        case AblationMode::full:
          out.segments.push_back(*pair);
          break;
        case AblationMode::question_only: {
          ReflectionPair p = *pair;
          p.answer.clear();
          out.segments.push_back(std::move(p));
          break;
        }
        case AblationMode::answer_only: {
          ReflectionPair p = *pair;
          p.question.clear();
          out.segments.push_back(std::move(p));
          break;
        }
        case AblationMode::no_reflect:
        case AblationMode::original:
          break;
      }
      continue;
    }
    const auto& step = std::get<Step>(seg);
    if (mode == AblationMode::original && step.kind == StepKind::erroneous) continue;
    out.segments.push_back(step);
  }
  return out;
}

Trajectory to_trajectory(const ReflectiveTrajectory& t) {
  Trajectory out;
  out.question_id = t.question_id;
  out.answer = t.answer;
  for (const auto& seg : t.segments) {
    const auto* step = std::get_if<Step>(&seg);
    if (!step || step->kind == StepKind::erroneous) continue;
    Step s = *step;
    s.kind = StepKind::original;
    out.steps.push_back(std::move(s));
  }
  return out;
}

ReflectiveTrajectory normalized(const ReflectiveTrajectory& t) {
  ReflectiveTrajectory out;
  out.question_id = t.question_id;
  out.answer = text::collapse_whitespace(t.answer);
  std::size_t next_index = 0;
  std::optional<std::size_t> open_triple;
  for (const auto& seg : t.segments) {
    if (const auto* pair = std::get_if<ReflectionPair>(&seg)) {
      ReflectionPair p;
      p.question = text::collapse_whitespace(pair->question);
      p.answer = text::collapse_whitespace(pair->answer);
      p.pinpoint_index = open_triple.value_or(next_index);
      out.segments.push_back(std::move(p));
      continue;
    }
    Step s = std::get<Step>(seg);
    s.text = text::collapse_whitespace(s.text);
    if (s.kind == StepKind::erroneous) {
      open_triple = next_index;
      s.index = next_index++;
    } else if (s.kind == StepKind::corrected && open_triple) {
      s.index = *open_triple;
      open_triple.reset();
    } else {
      open_triple.reset();
      s.index = next_index++;
    }
    out.segments.push_back(std::move(s));
  }
  return out;
}

bool structurally_equal(const ReflectiveTrajectory& a,
                        const ReflectiveTrajectory& b) {
  auto na = normalized(a);
  auto nb = normalized(b);
  return na.segments == nb.segments && na.answer == nb.answer;
}

std::optional<std::size_t> count_think_blocks(std::string_view s,
                                              const SpecialTokens& tokens) {
  const auto pieces = lex(s, tokens);
  if (balance_error(pieces)) return std::nullopt;
  return static_cast<std::size_t>(
      std::count_if(pieces.begin(), pieces.end(), [](const Piece& p) {
        return p.kind == PieceKind::think_open;
      }));
}

}  // namespace reflectforge
