#pragma once

#include <stdexcept>
#include <string>

namespace bluetrap {

// Error classes map one-to-one onto CLI exit codes.
enum class ErrorClass {
  config = 2,       // invalid input, geometry, parameters, parse failures
  numerical = 3,    // solver breakdown
  unreachable = 4,  // a requested target cannot be met
};

enum class ErrorCode {
  invalid_geometry,
  out_of_cavity,
  unsupported_mode,
  invalid_params,
  invalid_config,
  parse_error,
  no_information,
  solver_failure,
  unreachable_target,
};

inline ErrorClass error_class(ErrorCode code) {
  switch (code) {
    case ErrorCode::solver_failure:
      return ErrorClass::numerical;
    case ErrorCode::unreachable_target:
      return ErrorClass::unreachable;
    default:
      return ErrorClass::config;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorClass error_class() const noexcept { return bluetrap::error_class(code_); }
  int exit_code() const noexcept { return static_cast<int>(error_class()); }

 private:
  ErrorCode code_;
};

}  // namespace bluetrap
