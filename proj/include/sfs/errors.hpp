#pragma once

#include <stdexcept>
#include <string>

namespace sfs {

// Error categories double as the machine-parseable prefix printed by the CLI
// (`error:<category>: <message>`).
enum class ErrorCategory {
  contract,
  config,
  io,
  data,
  generation,
  train,
  internal,
};

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::contract: return "contract";
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::data: return "data";
    case ErrorCategory::generation: return "generation";
    case ErrorCategory::train: return "train";
    case ErrorCategory::internal: return "internal";
  }
  return "internal";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

// Precondition or invariant broken by the caller.
class ContractViolation : public Error {
 public:
  explicit ContractViolation(const std::string& message)
      : Error(ErrorCategory::contract, message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message)
      : Error(ErrorCategory::config, message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message)
      : Error(ErrorCategory::io, message) {}
};

// On-disk content problems. The code distinguishes the failure modes so
// callers (and tests) can tell them apart.
enum class DataErrorCode {
  version_mismatch,
  truncated_file,
  manifest_mismatch,
  architecture_mismatch,
  malformed,
};

class DataError : public Error {
 public:
  DataError(DataErrorCode code, const std::string& message)
      : Error(ErrorCategory::data, message), code_(code) {}

  DataErrorCode code() const noexcept { return code_; }

 private:
  DataErrorCode code_;
};

class GenerationError : public Error {
 public:
  explicit GenerationError(const std::string& message)
      : Error(ErrorCategory::generation, message) {}
};

class TrainError : public Error {
 public:
  explicit TrainError(const std::string& message)
      : Error(ErrorCategory::train, message) {}
};

}  // namespace sfs
