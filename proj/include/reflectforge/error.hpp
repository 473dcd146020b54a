#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace reflectforge {

enum class ErrorCode {
  // trajectory_model
  IndexOutOfRange,
  DegenerateCorrection,
  TokenCollision,
  UnbalancedTokens,
  GrammarViolation,
  EmptySegment,
  InvalidArgument,
  // llm_gateway
  AuthError,
  RateLimited,
  Timeout,
  ServerError,
  TransportError,
  ClientError,
  MalformedResponse,
  ScriptExhausted,
  // corpus_ingest
  FileNotFound,
  SchemaMismatch,
  EmptyCorpus,
  InvalidGold,
  // pinpoint_gen
  NoDecisionFound,
  NoEntitiesFound,
  EntityNotInSentence,
  // reflection_builder
  EmptyGeneration,
  MalformedGeneration,
  OptionLeak,
  LeakageDetected,
  NoChangeProduced,
  RewriteTooWide,
  // quality_filter
  JudgeUnavailable,
  // dataset_emitter / eval / cli
  WriteError,
  ValidationFailure,
  ParseError,
  DatasetError,
  ConfigError,
  StageFailure,
};

std::string_view to_string(ErrorCode code) noexcept;

/// True for gateway failures worth another attempt (429, 5xx, timeouts,
/// dropped connections).
bool is_retryable(ErrorCode code) noexcept;

/// True for codes produced by the chat gateway.
bool is_gateway_error(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace reflectforge
