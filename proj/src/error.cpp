#include "reflectforge/error.hpp"

namespace reflectforge {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::DegenerateCorrection: return "DegenerateCorrection";
    case ErrorCode::TokenCollision: return "TokenCollision";
    case ErrorCode::UnbalancedTokens: return "UnbalancedTokens";
    case ErrorCode::GrammarViolation: return "GrammarViolation";
    case ErrorCode::EmptySegment: return "EmptySegment";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::AuthError: return "AuthError";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::ServerError: return "ServerError";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::ClientError: return "ClientError";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::ScriptExhausted: return "ScriptExhausted";
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::InvalidGold: return "InvalidGold";
    case ErrorCode::NoDecisionFound: return "NoDecisionFound";
    case ErrorCode::NoEntitiesFound: return "NoEntitiesFound";
    case ErrorCode::EntityNotInSentence: return "EntityNotInSentence";
    case ErrorCode::EmptyGeneration: return "EmptyGeneration";
    case ErrorCode::MalformedGeneration: return "MalformedGeneration";
    case ErrorCode::OptionLeak: return "OptionLeak";
    case ErrorCode::LeakageDetected: return "LeakageDetected";
    case ErrorCode::NoChangeProduced: return "NoChangeProduced";
    case ErrorCode::RewriteTooWide: return "RewriteTooWide";
    case ErrorCode::JudgeUnavailable: return "JudgeUnavailable";
    case ErrorCode::WriteError: return "WriteError";
    case ErrorCode::ValidationFailure: return "ValidationFailure";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DatasetError: return "DatasetError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::StageFailure: return "StageFailure";
  }
  return "Unknown";
}

bool is_retryable(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::RateLimited:
    case ErrorCode::Timeout:
    case ErrorCode::ServerError:
    case ErrorCode::TransportError:
      return true;
    default:
      return false;
  }
}

bool is_gateway_error(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::AuthError:
    case ErrorCode::RateLimited:
    case ErrorCode::Timeout:
    case ErrorCode::ServerError:
    case ErrorCode::TransportError:
    case ErrorCode::ClientError:
    case ErrorCode::MalformedResponse:
    case ErrorCode::ScriptExhausted:
      return true;
    default:
      return false;
  }
}

}  // namespace reflectforge
