#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dloo {

enum class ErrorCode {
  InvalidConfig,
  UnknownAgent,
  TransientHttp,
  PermanentHttp,
  AuthMissing,
  ScriptExhausted,
  InstructionTooLarge,
  MissingChoices,
  EmptyPeers,
  MismatchedTranscript,
  QuestionSetMismatch,
  JudgeRequired,
  NTooSmall,
  TooFewPairs,
  EmptyInput,
  ParseError,
  GoldMissing,
  IoError,
  SchemaVersionMismatch,
  MissingOriginalRun,
  RunExists,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so the
// CLI can map it onto an exit status without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dloo
