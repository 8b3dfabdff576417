#include "llmtraffic/error.hpp"

namespace llmtraffic {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::UnknownMagic: return "UnknownMagic";
    case ErrorKind::TruncatedHeader: return "TruncatedHeader";
    case ErrorKind::FileUnreadable: return "FileUnreadable";
    case ErrorKind::MalformedRecord: return "MalformedRecord";
    case ErrorKind::InsufficientRecords: return "InsufficientRecords";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::ConnectionRefused: return "ConnectionRefused";
    case ErrorKind::CaptureUnavailable: return "CaptureUnavailable";
    case ErrorKind::CountMismatch: return "CountMismatch";
  }
  return "Unknown";
}

}  // namespace llmtraffic
