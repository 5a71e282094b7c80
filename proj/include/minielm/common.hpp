#pragma once

#include <stdexcept>
#include <string>

namespace minielm {

// Error taxonomy mirrored by the CLI exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfigError = 2,
  kExitDataError = 3,
  kExitDependencyError = 4,
  kExitDivergence = 5,
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Judge / external scorer transport or contract failures.
class DependencyError : public std::runtime_error {
 public:
  explicit DependencyError(const std::string& msg) : std::runtime_error(msg) {}
};

class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace minielm
