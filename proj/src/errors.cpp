#include "fiat/errors.hpp"

namespace fiat {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::TapeMismatch: return "TapeMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::SequenceTooLong: return "SequenceTooLong";
    case ErrorKind::ReservedToken: return "ReservedToken";
    case ErrorKind::RankTooLarge: return "RankTooLarge";
    case ErrorKind::AlreadyMerged: return "AlreadyMerged";
    case ErrorKind::RoleMismatch: return "RoleMismatch";
    case ErrorKind::RenderCollision: return "RenderCollision";
    case ErrorKind::BackendUnavailable: return "BackendUnavailable";
    case ErrorKind::MalformedResponse: return "MalformedResponse";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::NoPositives: return "NoPositives";
    case ErrorKind::UnknownLanguage: return "UnknownLanguage";
    case ErrorKind::MissingAugmentation: return "MissingAugmentation";
    case ErrorKind::DivergedTraining: return "DivergedTraining";
    case ErrorKind::ParseFailure: return "ParseFailure";
    case ErrorKind::ArtifactNotFound: return "ArtifactNotFound";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(message), kind_(kind) {}

void raise(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace fiat
