#pragma once

#include <stdexcept>
#include <string>

namespace tdr {

/// Raised for invalid shapes, out-of-range hyperparameters and malformed config.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when a numeric quantity that must be finite is not (gradients, losses, targets).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tdr
