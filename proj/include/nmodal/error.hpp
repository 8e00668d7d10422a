#pragma once

#include <stdexcept>
#include <string>

namespace nmodal {

enum class ErrorKind {
  invalid_argument,
  dimension_mismatch,
  zero_norm,
  bad_magic,
  bad_version,
  truncated,
  format,
  shape_mismatch,
  numeric,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid argument";
    case ErrorKind::dimension_mismatch: return "dimension mismatch";
    case ErrorKind::zero_norm: return "zero norm";
    case ErrorKind::bad_magic: return "bad magic";
    case ErrorKind::bad_version: return "bad version";
    case ErrorKind::truncated: return "truncated input";
    case ErrorKind::format: return "malformed input";
    case ErrorKind::shape_mismatch: return "shape mismatch";
    case ErrorKind::numeric: return "numeric failure";
  }
  return "unknown";
}

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it to an exit status without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Data errors come from malformed or incompatible inputs rather than bugs
  // in the caller's arguments.
  bool is_data_error() const noexcept {
    switch (kind_) {
      case ErrorKind::bad_magic:
      case ErrorKind::bad_version:
      case ErrorKind::truncated:
      case ErrorKind::format:
      case ErrorKind::shape_mismatch:
        return true;
      default:
        return false;
    }
  }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace nmodal
