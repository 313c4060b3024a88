#pragma once

#include <stdexcept>
#include <string>

namespace mos {

// Fault classes map to distinct CLI exit codes (see tools/).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input data present but structurally malformed (bad length, bad token).
struct FormatError : IoError {
  explicit FormatError(const std::string& msg) : IoError(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mos
