#pragma once

#include <stdexcept>
#include <string>

namespace spanparse {

enum class ErrorKind {
  UnbalancedBrackets,
  UnknownOntologyPrefix,
  MalformedLeaf,
  InvalidStructure,
  IndexOutOfRange,
  AlignmentFailure,
  EmptyUtterance,
  InvalidToken,
  IoError,
  MalformedLine,
  InvalidK,
  SourceTooLong,
  LengthOutOfRange,
  TargetOutOfVocab,
  NonFiniteLoss,
  DivergedLoss,
  ConfigError,
  MaxStepsExceeded,
};

const char* to_string(ErrorKind k);

// Single exception type for the whole library; kind() tells callers what went
// wrong without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + ": " + msg),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind k, const std::string& msg) {
  throw Error(k, msg);
}

}  // namespace spanparse
