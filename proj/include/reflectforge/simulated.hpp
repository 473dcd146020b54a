#pragma once

#include <string>
#include <vector>

#include "reflectforge/corpus.hpp"
#include "reflectforge/gateway.hpp"

namespace reflectforge {

/// Behaviour knobs of the simulated model.
struct SimulatedModelOptions {
  /// Chance that an RG1 sample picks the gold option.
  double sample_accuracy = 0.5;
  /// Fill accuracy for entities the model knows well and for those it does
  /// not; which is which is fixed per entity.
  double fill_accuracy_easy = 0.9;
  double fill_accuracy_hard = 0.25;
  /// Chance that a filter trial repairs the error.
  double filter_success = 0.75;
  double eval_accuracy = 0.6;
  /// Chance that an eval response carries a think block.
  double eval_reflect_rate = 0.3;
};

/// A deterministic stand-in for a chat model that understands the default
/// prompt templates. It knows the gold answers of `records` and draws every
/// choice from the mock's per-request generator, so a fixed seed fixes the
/// whole pipeline. Used by the CLI's mock backend and the end-to-end tests.
llm::Responder simulated_model(std::vector<QARecord> records, SimulatedModelOptions options = {});

/// Medical terms the simulated model recognises, with their entity type.
struct LexiconEntry {
  std::string term;
  std::string type;
};
const std::vector<LexiconEntry>& simulated_lexicon();

}  // namespace reflectforge
