#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace glyphclass {

enum class ErrorKind {
  Decode,
  Dimension,
  Parameter,
  Label,
  Divergence,
  Parse,
  Size,
  Duplicate,
  Format,
  Truncation,
  Io,
  Stratification,
  MissingClass,
  EmptyDocument,
  EmptyDataset,
  Length,
  BatchSize,
  Input,
  Compatibility,
  Lock,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Decode: return "decode";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::Label: return "label";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Size: return "size";
    case ErrorKind::Duplicate: return "duplicate";
    case ErrorKind::Format: return "format";
    case ErrorKind::Truncation: return "truncation";
    case ErrorKind::Io: return "io";
    case ErrorKind::Stratification: return "stratification";
    case ErrorKind::MissingClass: return "missing-class";
    case ErrorKind::EmptyDocument: return "empty-document";
    case ErrorKind::EmptyDataset: return "empty-dataset";
    case ErrorKind::Length: return "length";
    case ErrorKind::BatchSize: return "batch-size";
    case ErrorKind::Input: return "input";
    case ErrorKind::Compatibility: return "compatibility";
    case ErrorKind::Lock: return "lock";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace glyphclass
