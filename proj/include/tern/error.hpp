#pragma once

#include <stdexcept>
#include <string>

namespace tern {

// CLI exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric error.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumeric = 3,
};

// Violated operation contract: bad axis, shape mismatch, empty input, ...
class ArgumentError : public std::runtime_error {
 public:
  explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration: non-divisible head count, unknown config keys, ...
class ConfigError : public ArgumentError {
 public:
  explicit ConfigError(const std::string& msg) : ArgumentError(msg) {}
};

// Malformed or inconsistent input data: parse failures, out-of-range boxes,
// id collisions. Messages carry ids / line numbers.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tern
