#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "reflectforge/corpus.hpp"
#include "reflectforge/io.hpp"
#include "reflectforge/reflection.hpp"
#include "reflectforge/trajectory.hpp"

namespace reflectforge {

struct ChatMessage {
  std::string role;
  std::string content;
  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

/// One line of a training file.
struct TrainingExample {
  std::string id;
  Source source = Source::consultation;
  AblationMode mode = AblationMode::full;
  std::vector<ChatMessage> messages;
  std::string pathway;
  std::size_t pinpoints = 0;

  const std::string& assistant() const;
  friend bool operator==(const TrainingExample&, const TrainingExample&) = default;
};

/// Field order is fixed: id, source, mode, messages, meta.
io::ordered_json to_json(const TrainingExample& e);
TrainingExample example_from_json(const io::ordered_json& j);

/// An assembled reflective trajectory with what the training line needs.
struct ReflectiveExample {
  std::string id;
  const QARecord* record = nullptr;
  Pathway pathway = Pathway::rg1;
  ReflectiveTrajectory trajectory;
  std::size_t pinpoints = 0;
};

/// RG1 drafts become one example each; the RG2 drafts of a record become
/// one multi-pinpoint example. Ordered by record id, then example id.
std::vector<ReflectiveExample> group_drafts(const std::vector<ReflectionDraft>& drafts,
                                            const std::vector<QARecord>& records);

/// The question, followed by the options for multiple-choice records.
std::string user_content(const QARecord& record);

TrainingExample make_example(const ReflectiveExample& r, AblationMode mode,
                             const SpecialTokens& tokens = {});

/// Empty when `e` parses back under its mode's grammar. Full, question_only
/// and answer_only texts must also match `expected` structurally.
std::optional<std::string> check_parse_back(const TrainingExample& e,
                                            const ReflectiveTrajectory& expected,
                                            const SpecialTokens& tokens = {});

struct DatasetStats {
  std::size_t total = 0;
  std::map<std::string, std::size_t> per_source;
  std::map<std::string, std::size_t> per_mode;
  std::map<std::size_t, std::size_t> pinpoints;
  std::map<std::size_t, std::size_t> reflection_blocks;
  /// Assistant lengths in bytes; unset for an empty file.
  std::optional<double> mean_assistant_length;
  std::optional<double> median_assistant_length;
  /// Lines whose think tokens do not balance.
  std::size_t unbalanced = 0;

  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

io::ordered_json to_json(const DatasetStats& s);

DatasetStats compute_stats(const std::vector<TrainingExample>& examples,
                           const SpecialTokens& tokens = {});

/// Stats of a training file. ParseError names the offending line.
DatasetStats compute_stats(const std::filesystem::path& file, const SpecialTokens& tokens = {});

struct EmitOptions {
  AblationMode mode = AblationMode::full;
  SpecialTokens tokens;
  /// Any parse-back failure aborts the write.
  bool strict = false;
};

struct RejectedExample {
  std::string id;
  std::string reason;
};

struct EmitResult {
  std::vector<TrainingExample> examples;
  std::vector<RejectedExample> rejected;
  DatasetStats stats;
};

/// Builds and checks every example. ValidationFailure in strict mode.
EmitResult build_training_set(const std::vector<ReflectionDraft>& drafts,
                              const std::vector<QARecord>& records, const EmitOptions& options);

/// build_training_set, then one JSONL line per accepted example.
EmitResult emit_training_file(const std::vector<ReflectionDraft>& drafts,
                              const std::vector<QARecord>& records, const EmitOptions& options,
                              const std::filesystem::path& out_path);

/// {"special_tokens": [think open, think close, modified open, modified close]}
io::ordered_json token_manifest(const SpecialTokens& tokens);
void emit_token_manifest(const SpecialTokens& tokens, const std::filesystem::path& out_path);

/// Seeded uniform sample without replacement of `per_source[s]` examples of
/// each source (all of them when fewer exist), in the original order.
std::vector<TrainingExample> sample_examples(const std::vector<TrainingExample>& examples,
                                             const std::map<Source, std::size_t>& per_source,
                                             std::uint64_t seed);

}  // namespace reflectforge
