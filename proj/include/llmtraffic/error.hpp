#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace llmtraffic {

enum class ErrorKind {
  UnknownMagic,
  TruncatedHeader,
  FileUnreadable,
  MalformedRecord,
  InsufficientRecords,
  TooFewSamples,
  InvalidArgument,
  Config,
  ConnectionRefused,
  CaptureUnavailable,
  CountMismatch,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Single exception type for the toolkit; `kind` is stable for scripting.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace llmtraffic
