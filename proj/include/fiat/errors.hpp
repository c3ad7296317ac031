#pragma once

#include <stdexcept>
#include <string>

namespace fiat {

enum class ErrorKind {
  ShapeMismatch,
  IndexOutOfRange,
  TapeMismatch,
  NonFinite,
  SequenceTooLong,
  ReservedToken,
  RankTooLarge,
  AlreadyMerged,
  RoleMismatch,
  RenderCollision,
  BackendUnavailable,
  MalformedResponse,
  Timeout,
  SchemaViolation,
  DuplicateId,
  LengthMismatch,
  NoPositives,
  UnknownLanguage,
  MissingAugmentation,
  DivergedTraining,
  ParseFailure,
  ArtifactNotFound,
  ConfigError,
  IoError,
};

const char* to_string(ErrorKind kind);

/// Error with a machine-readable kind; the CLI prints it as "error:<Kind>: <message>".
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void raise(ErrorKind kind, const std::string& message);

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) raise(kind, message);
}

}  // namespace fiat
