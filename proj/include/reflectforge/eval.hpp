#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "reflectforge/corpus.hpp"
#include "reflectforge/gateway.hpp"
#include "reflectforge/io.hpp"
#include "reflectforge/prompts.hpp"
#include "reflectforge/trajectory.hpp"

namespace reflectforge {

enum class ChoicePolicy {
  letters,
  /// Falls back to the option text quoted in the response.
  letters_then_text,
};

enum class UnparsedPolicy { incorrect, exclude };

std::string_view to_string(ChoicePolicy p) noexcept;
std::optional<ChoicePolicy> parse_choice_policy(std::string_view s);
std::string_view to_string(UnparsedPolicy p) noexcept;
std::optional<UnparsedPolicy> parse_unparsed_policy(std::string_view s);

/// Option letter chosen by `response`; the keys of `options` are the
/// letters. Uses the decision-statement cascade, then, under
/// letters_then_text, the option text mentioned last. Throws NoDecisionFound.
std::string extract_choice(std::string_view response,
                           const std::map<std::string, std::string>& options,
                           ChoicePolicy policy = ChoicePolicy::letters);

struct ReflectionStats {
  std::size_t responses = 0;
  std::size_t reflecting = 0;
  std::size_t total_blocks = 0;
  std::size_t unbalanced = 0;
  std::map<std::size_t, std::size_t> distribution;
  /// Unset for an empty response list.
  std::optional<double> fraction_reflecting;
  std::optional<double> mean_blocks;
  std::optional<double> mean_length;

  friend bool operator==(const ReflectionStats&, const ReflectionStats&) = default;
};

/// Balanced think blocks per response. Unbalanced responses count as zero
/// blocks and are tallied in `unbalanced`.
ReflectionStats reflection_statistics(const std::vector<std::string>& responses,
                                      const SpecialTokens& tokens = {});

io::ordered_json to_json(const ReflectionStats& s);

struct EvalConfig {
  std::string benchmark = "benchmark";
  std::filesystem::path dataset;
  MultichoiceSchema schema;
  int repeats = 1;
  llm::GenerationParams params{0.0, 1024, std::nullopt, {}};
  ChoicePolicy choice = ChoicePolicy::letters;
  UnparsedPolicy unparsed = UnparsedPolicy::incorrect;
  SpecialTokens tokens;
};

struct ItemResult {
  int repeat = 0;
  std::string id;
  std::string gold;
  std::string extracted;
  bool correct = false;
  bool unparsed = false;
  /// Gateway failure; scored like an unparsed response.
  bool failed = false;
  std::string response;
};

struct EvalResult {
  std::string benchmark;
  std::size_t n_items = 0;
  std::vector<double> per_repeat;
  double mean_accuracy = 0.0;
  /// Ordered by repeat, then item id.
  std::vector<ItemResult> items;
  ReflectionStats reflection;
};

/// Throws DatasetError when the dataset does not load as multiple-choice
/// records, InvalidArgument when repeats < 1.
EvalResult evaluate_model(const EvalConfig& config, const llm::Gateway& gateway,
                          const PromptCatalog& prompts);

/// Same, over records already in memory.
EvalResult evaluate_records(const EvalConfig& config, std::vector<QARecord> records,
                            const llm::Gateway& gateway, const PromptCatalog& prompts);

/// Report with `config_echo` embedded under "config".
io::ordered_json to_json(const EvalResult& r, const io::ordered_json& config_echo = {});

/// One row per item and repeat; the response column is quoted.
std::string items_csv(const EvalResult& r);

}  // namespace reflectforge
