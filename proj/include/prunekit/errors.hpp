#pragma once

#include <stdexcept>
#include <string>

namespace prunekit {

// Precondition broken by the caller: bad shapes, out-of-range arguments.
class ContractViolation : public std::invalid_argument {
 public:
  explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

// NaN/Inf showed up, or an iterative method failed to converge.
class NumericalFailure : public std::runtime_error {
 public:
  explicit NumericalFailure(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or inconsistent configuration file.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

#define PRUNEKIT_REQUIRE(cond, msg)                      \
  do {                                                   \
    if (!(cond)) throw ::prunekit::ContractViolation(msg); \
  } while (0)

}  // namespace prunekit
