// reflectforge: builds reflective training data and evaluates models.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 stage failure.

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "reflectforge/error.hpp"
#include "reflectforge/pipeline.hpp"

namespace rf = reflectforge;
namespace pl = reflectforge::pipeline;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Common {
  std::string config;
  bool resume = false;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string workdir;
  bool dry_run = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_mode) {
  cmd->add_option("-c,--config", c.config, "Pipeline config (JSON, comments allowed)")->required();
  cmd->add_flag("--resume", c.resume, "Skip finished stages and continue from checkpoints");
  cmd->add_option("--seed", c.seed, "Override the config seed");
  cmd->add_option("--workdir", c.workdir, "Override the artifact directory");
  cmd->add_flag("--dry-run", c.dry_run, "Validate the config and print the resolved settings");
  cmd->add_flag("-q,--quiet", c.quiet, "No progress output");
  if (with_mode) {
    cmd->add_option("--mode", c.mode, "Only this training mode")
        ->check(CLI::IsMember({"full", "no_reflect", "question_only", "answer_only", "original"}));
  }
}

int run_stages(const Common& c, std::vector<pl::Stage> stages, bool use_defaults) {
  auto config = pl::load_config(c.config);
  if (c.seed) config.seed = *c.seed;
  if (!c.workdir.empty()) config.workdir = c.workdir;
  if (use_defaults) stages = pl::default_stages(config);

  pl::RunOptions opts;
  opts.resume = c.resume;
  opts.dry_run = c.dry_run;
  if (!c.mode.empty()) opts.mode = rf::parse_ablation_mode(c.mode);
  if (!c.quiet) opts.log = &std::cerr;

  auto outcomes = pl::run(config, stages, opts);
  if (c.dry_run) {
    rf::io::ordered_json plan = {{"workdir", config.workdir.string()},
                                 {"stages", rf::io::ordered_json::array()},
                                 {"config", config.echo()}};
    for (auto s : stages) plan["stages"].push_back(pl::to_string(s));
    std::cout << plan.dump(2) << "\n";
    return 0;
  }
  for (const auto& o : outcomes) {
    std::cout << pl::to_string(o.stage) << (o.skipped ? " skipped (already complete)" : " ok")
              << "\n";
  }
  return 0;
}

int run_sample(const std::string& input, const std::string& output, std::size_t consultation,
               std::size_t multichoice, std::uint64_t seed) {
  std::vector<rf::TrainingExample> examples;
  for (const auto& row : rf::io::read_jsonl(input)) {
    examples.push_back(rf::example_from_json(row.value));
  }
  auto picked = rf::sample_examples(
      examples, {{rf::Source::consultation, consultation}, {rf::Source::multichoice, multichoice}},
      seed);
  std::vector<rf::io::ordered_json> rows;
  for (const auto& e : picked) rows.push_back(rf::to_json(e));
  rf::io::write_jsonl(output, rows);
  std::cout << picked.size() << " examples written to " << output << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reflective training data construction for medical QA"};
  app.require_subcommand(1);

  Common common;
  std::map<std::string, pl::Stage> stage_cmds = {
      {"ingest", pl::Stage::ingest}, {"pinpoint", pl::Stage::pinpoint},
      {"reflect", pl::Stage::reflect}, {"filter", pl::Stage::filter},
      {"emit", pl::Stage::emit}, {"eval", pl::Stage::eval}};
  std::map<std::string, CLI::App*> subs;
  subs["ingest"] = app.add_subcommand("ingest", "Load and clean the source corpora");
  subs["pinpoint"] = app.add_subcommand("pinpoint", "Find erroneous steps (RG1 and RG2)");
  subs["reflect"] = app.add_subcommand("reflect", "Write reflections and corrections");
  subs["filter"] = app.add_subcommand("filter", "Keep reflections the model can act on");
  subs["emit"] = app.add_subcommand("emit", "Write training files and the token manifest");
  subs["eval"] = app.add_subcommand("eval", "Score a model on a multiple-choice benchmark");
  for (auto& [name, cmd] : subs) add_common(cmd, common, name == "emit");

  auto* stats = app.add_subcommand("stats", "Dataset statistics of emitted training files");
  std::string stats_input;
  stats->add_option("--config,-c", common.config, "Pipeline config");
  stats->add_option("--input", stats_input, "A training file to describe instead")
      ->check(CLI::ExistingFile);
  stats->add_option("--workdir", common.workdir, "Override the artifact directory");
  stats->add_option("--mode", common.mode, "Only this training mode")
      ->check(CLI::IsMember({"full", "no_reflect", "question_only", "answer_only", "original"}));
  stats->add_flag("-q,--quiet", common.quiet, "No progress output");

  auto* pipeline = app.add_subcommand("pipeline", "Run every stage, or one with --stage");
  add_common(pipeline, common, true);
  std::string only_stage;
  pipeline->add_option("--stage", only_stage, "Run just this stage")
      ->check(CLI::IsMember({"ingest", "pinpoint", "reflect", "filter", "emit", "stats", "eval"}));

  auto* sample = app.add_subcommand("sample", "Seeded per-source subsample of a training file");
  std::string sample_in, sample_out;
  std::size_t n_consult = 0, n_mcq = 0;
  std::uint64_t sample_seed = 7;
  sample->add_option("--input", sample_in, "Training file")->required()->check(CLI::ExistingFile);
  sample->add_option("--output", sample_out, "Where to write the sample")->required();
  sample->add_option("--consultation", n_consult, "Consultation examples to keep");
  sample->add_option("--multichoice", n_mcq, "Multiple-choice examples to keep");
  sample->add_option("--seed", sample_seed, "Sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    for (const auto& [name, stage] : stage_cmds) {
      if (subs[name]->parsed()) return run_stages(common, {stage}, false);
    }
    if (pipeline->parsed()) {
      if (only_stage.empty()) return run_stages(common, {}, true);
      return run_stages(common, {*pl::parse_stage(only_stage)}, false);
    }
    if (stats->parsed()) {
      if (!stats_input.empty()) {
        auto s = rf::compute_stats(std::filesystem::path(stats_input));
        std::cout << rf::to_json(s).dump(2) << "\n";
        return 0;
      }
      if (common.config.empty()) {
        std::cerr << "stats needs --config or --input\n";
        return kExitConfig;
      }
      return run_stages(common, {pl::Stage::stats}, false);
    }
    if (sample->parsed()) return run_sample(sample_in, sample_out, n_consult, n_mcq, sample_seed);
  } catch (const rf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == rf::ErrorCode::ConfigError ? kExitConfig : kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
