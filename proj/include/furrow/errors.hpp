#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace furrow {

enum class ErrorKind {
  Config,        // bad plan/config before any work
  Parse,         // malformed input file
  Validation,    // well-formed input violating invariants
  Template,      // template override references an unknown placeholder
  AuthMissing,   // credential env var unset
  Exhausted,     // retries spent, carries last cause
  Http,          // non-retryable HTTP failure
  FixtureMiss,   // replay fixture has no entry for the request digest
  ScriptEmpty,   // scripted backend has nothing left to answer
  Storage,       // unwritable directory, failed rename
  DuplicateKey,  // append-only store cell already exists
  JudgeFormat,   // judge output unparsable after retry
  EmptyInput,    // aggregation over zero records
  MissingRun,    // run id not present in the store
  MissingRecords // run exists but has no evaluation records
};

inline std::string_view error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return "Config";
    case ErrorKind::Parse: return "Parse";
    case ErrorKind::Validation: return "Validation";
    case ErrorKind::Template: return "Template";
    case ErrorKind::AuthMissing: return "AuthMissing";
    case ErrorKind::Exhausted: return "Exhausted";
    case ErrorKind::Http: return "Http";
    case ErrorKind::FixtureMiss: return "FixtureMiss";
    case ErrorKind::ScriptEmpty: return "ScriptEmpty";
    case ErrorKind::Storage: return "Storage";
    case ErrorKind::DuplicateKey: return "DuplicateKey";
    case ErrorKind::JudgeFormat: return "JudgeFormat";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::MissingRun: return "MissingRun";
    case ErrorKind::MissingRecords: return "MissingRecords";
  }
  return "Unknown";
}

/// Single exception type for the whole library; `kind` tells callers what
/// went wrong without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
        kind_(kind),
        message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// The message without the kind prefix, for wrapping into another Error.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

}  // namespace furrow
