#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace jointvit {

enum class ErrorKind {
  Dimension,
  Config,
  Contract,
  Numeric,
  Domain,
  Policy,
  Balance,
  Ingest,
  Format,
  Io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Config: return "config";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Policy: return "policy";
    case ErrorKind::Balance: return "balance";
    case ErrorKind::Ingest: return "ingest";
    case ErrorKind::Format: return "format";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library carries a kind so the CLI can print
/// a single machine-parsable `error[<kind>]: <message>` line.
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

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace jointvit
