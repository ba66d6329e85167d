#pragma once

#include <stdexcept>
#include <string>

namespace protostream {

// Bad configuration or malformed input: wrong shapes, unknown config keys,
// unparseable files. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller broke an API contract (e.g. backward() on a non-scalar loss).
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// A runtime invariant failed (slot overflow, non-finite loss, ...).
// Maps to CLI exit code 4.
class InvariantViolation : public std::runtime_error {
 public:
  explicit InvariantViolation(const std::string& msg)
      : std::runtime_error(msg) {}
};

}  // namespace protostream
