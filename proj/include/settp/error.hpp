#pragma once

#include <stdexcept>
#include <string>

namespace settp {

enum class ErrorKind {
  invalid_argument,
  dimension_mismatch,
  parse,
  io,
  format,
  not_found,
  numeric,
  divergence,
  missing_artifact,
};

const char* to_string(ErrorKind kind);

/// Library-wide exception. The kind is what the CLI reports in its error record.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace settp
