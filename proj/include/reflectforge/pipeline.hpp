#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "reflectforge/corpus.hpp"
#include "reflectforge/emitter.hpp"
#include "reflectforge/eval.hpp"
#include "reflectforge/filter.hpp"
#include "reflectforge/gateway.hpp"
#include "reflectforge/io.hpp"
#include "reflectforge/pinpoint.hpp"
#include "reflectforge/reflection.hpp"
#include "reflectforge/simulated.hpp"

namespace reflectforge::pipeline {

enum class Stage { ingest, pinpoint, reflect, filter, emit, stats, eval };

std::string_view to_string(Stage s) noexcept;
std::optional<Stage> parse_stage(std::string_view s);
inline constexpr Stage kAllStages[] = {Stage::ingest, Stage::pinpoint, Stage::reflect,
                                       Stage::filter, Stage::emit,     Stage::stats,
                                       Stage::eval};

struct BackendSection {
  llm::BackendConfig backend;
  /// Only used by the mock backend.
  SimulatedModelOptions simulated;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::filesystem::path workdir = "work";
  std::filesystem::path consultations;
  std::filesystem::path multichoice;
  ConsultationSchema consultation_schema;
  MultichoiceSchema multichoice_schema;
  /// Directory of template overrides; empty uses the built-in catalog.
  std::filesystem::path prompts;

  BackendSection backend;
  /// Unset: the construction backend (and its in-flight budget) is reused.
  std::optional<BackendSection> filter_backend;
  std::optional<BackendSection> eval_backend;

  PreprocessPolicy preprocess;
  Rg1Params rg1;
  Rg2Params rg2;
  ReflectionParams reflection;
  FilterParams filter;

  std::vector<AblationMode> modes = {AblationMode::full, AblationMode::no_reflect,
                                     AblationMode::question_only, AblationMode::answer_only,
                                     AblationMode::original};
  bool strict_emit = false;
  SpecialTokens tokens;

  /// Eval runs only when a dataset is configured.
  EvalConfig eval;
  bool eval_csv = true;

  /// Items per checkpoint in the resumable stages.
  std::size_t checkpoint_every = 16;

  /// Resolved settings for reports. Holds the name of the key variable,
  /// never a key.
  io::ordered_json echo() const;
};

/// JSON with comments. Relative paths resolve against `base_dir`. Unknown
/// keys, wrong types and bad values raise ConfigError naming the field.
PipelineConfig config_from_json(const io::ordered_json& j, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);
io::ordered_json parse_config_text(std::string_view text, const std::string& origin);

/// Checks that inputs exist and settings are coherent. ConfigError.
void validate(const PipelineConfig& config, const std::vector<Stage>& stages);

struct Artifacts {
  std::filesystem::path dir;

  std::filesystem::path records() const { return dir / "records.jsonl"; }
  std::filesystem::path ingest_report() const { return dir / "ingest_report.json"; }
  std::filesystem::path pinpoints() const { return dir / "pinpoints.jsonl"; }
  std::filesystem::path pinpoint_report() const { return dir / "pinpoint_report.json"; }
  std::filesystem::path drafts() const { return dir / "drafts.jsonl"; }
  std::filesystem::path reflect_failures() const { return dir / "reflect_failures.jsonl"; }
  std::filesystem::path reflect_report() const { return dir / "reflect_report.json"; }
  std::filesystem::path verdicts() const { return dir / "verdicts.jsonl"; }
  std::filesystem::path filter_report() const { return dir / "filter_report.json"; }
  std::filesystem::path training(AblationMode m) const {
    return dir / ("train_" + std::string(reflectforge::to_string(m)) + ".jsonl");
  }
  std::filesystem::path token_manifest() const { return dir / "tokens.json"; }
  std::filesystem::path emit_report() const { return dir / "emit_report.json"; }
  std::filesystem::path stats_report() const { return dir / "stats.json"; }
  std::filesystem::path eval_report() const { return dir / "eval_report.json"; }
  std::filesystem::path eval_csv() const { return dir / "eval_items.csv"; }
  /// In-progress checkpoint of a resumable stage.
  std::filesystem::path partial(Stage s) const {
    return dir / (std::string(to_string(s)) + ".partial.jsonl");
  }
  /// The artifact whose presence marks the stage complete.
  std::filesystem::path marker(Stage s) const;
};

struct RunOptions {
  bool resume = false;
  /// Restricts emit (and stats) to one mode.
  std::optional<AblationMode> mode;
  bool dry_run = false;
  /// Progress lines; null for silence.
  std::ostream* log = nullptr;
  /// Test hook: stop with StageFailure after this many checkpoints of a
  /// resumable stage, as if the process had been killed.
  std::optional<std::size_t> interrupt_after_checkpoints;
};

struct StageOutcome {
  Stage stage;
  bool skipped = false;
  io::ordered_json report;
};

/// Runs `stages` in order. Stage errors surface as StageFailure naming the
/// stage and how to resume; configuration problems as ConfigError.
std::vector<StageOutcome> run(const PipelineConfig& config, const std::vector<Stage>& stages,
                              const RunOptions& options = {});

/// ingest through stats, plus eval when a dataset is configured.
std::vector<Stage> default_stages(const PipelineConfig& config);

/// Gateway for a backend section. The mock backend is the simulated model
/// seeded with `seed` and knowing `records`.
llm::Gateway make_gateway(const BackendSection& section, std::uint64_t seed,
                          std::vector<QARecord> records);

}  // namespace reflectforge::pipeline
