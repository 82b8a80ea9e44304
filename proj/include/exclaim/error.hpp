// Copyright (c) 2026, The exclaim authors
// SPDX-License-Identifier: Apache-2.0
//
// Error type shared by every module. The code doubles as the CLI exit status.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace exclaim {

enum class ErrorCode : int {
  Config = 2,     // invalid configuration or usage
  Data = 3,       // malformed input, I/O failure, unresolvable reference
  Numerical = 4,  // NaN/Inf encountered during optimization
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Config: return "config";
    case ErrorCode::Data: return "data";
    case ErrorCode::Numerical: return "numerical";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail_config(const std::string& msg) { throw Error(ErrorCode::Config, msg); }
[[noreturn]] inline void fail_data(const std::string& msg) { throw Error(ErrorCode::Data, msg); }
[[noreturn]] inline void fail_numerical(const std::string& msg) { throw Error(ErrorCode::Numerical, msg); }

}  // namespace exclaim
