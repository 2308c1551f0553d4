#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace codepoison {

// Machine-readable failure categories. The CLI prints the name of the code
// so scripts can branch on it.
enum class ErrorCode {
  kLexError,
  kInconsistentExample,
  kIoError,
  kFormatError,
  kDimensionMismatch,
  kTargetOutOfVocabulary,
  kEmptyCorpus,
  kEmptySequence,
  kNoIdentifiers,
  kAlreadyPoisoned,
  kQuotaUnreachable,
  kDegenerateMatrix,
  kMismatchedConfig,
  kEmptyInput,
  kDigestMismatch,
  kMissingArtifact,
  kInvalidArgument,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class LexError : public Error {
 public:
  LexError(const std::string& message, int line, int column)
      : Error(ErrorCode::kLexError, message + " at line " + std::to_string(line) +
                                        ", column " + std::to_string(column)),
        line_(line),
        column_(column) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& message, std::size_t record)
      : Error(ErrorCode::kFormatError,
              "record " + std::to_string(record) + ": " + message),
        record_(record) {}

  std::size_t record() const noexcept { return record_; }

 private:
  std::size_t record_;
};

}  // namespace codepoison
