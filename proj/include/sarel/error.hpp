#pragma once

#include <stdexcept>
#include <string>

namespace sarel {

// Error categories. The CLI maps them onto its exit codes.
enum class ErrorKind {
  config,      // invalid parameters (bit widths, fault sites, array sizes)
  range,       // degenerate numeric range
  input,       // malformed or out-of-domain data
  format,      // interchange files that do not parse or do not chain
  io,          // filesystem failures
  aggregation, // nothing to aggregate
  internal,
};

const char* to_string(ErrorKind kind);

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

} // namespace sarel
