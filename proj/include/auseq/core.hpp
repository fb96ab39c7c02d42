#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace auseq {

enum class ErrorKind {
  Format,       // malformed file contents or headers
  Row,          // a specific data row failed to parse
  EmptyRecord,  // filtering left nothing behind
  Manifest,
  Spec,         // invalid generator/config parameters
  SingleClass,
  Shape,        // dimension or width mismatch
  NonFinite,
  Checkpoint,
  TooShort,
  Io,
  Config,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Format: return "format error";
    case ErrorKind::Row: return "row error";
    case ErrorKind::EmptyRecord: return "empty record";
    case ErrorKind::Manifest: return "manifest error";
    case ErrorKind::Spec: return "spec error";
    case ErrorKind::SingleClass: return "single-class error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::NonFinite: return "non-finite value";
    case ErrorKind::Checkpoint: return "checkpoint error";
    case ErrorKind::TooShort: return "too short";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::Config: return "config error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

enum class Label : std::uint8_t { Truthful = 0, Deceptive = 1 };

inline int to_int(Label label) { return static_cast<int>(label); }

inline const char* to_string(Label label) {
  return label == Label::Deceptive ? "deceptive" : "truthful";
}

}  // namespace auseq
