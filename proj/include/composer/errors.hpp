#pragma once

#include <stdexcept>
#include <string>

namespace composer {

// Error taxonomy mirrors the CLI exit codes: config 2, data 3, divergence 4.
// UsageError marks caller bugs (bad arguments to library internals).

class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class DivergenceError : public std::runtime_error {
public:
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

class UsageError : public std::runtime_error {
public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace composer
