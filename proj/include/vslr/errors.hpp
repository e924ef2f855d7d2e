#pragma once

#include <stdexcept>
#include <string>

namespace vslr {

// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Flow above what the fundamental diagram can carry.
class InfeasibleFlowError : public DomainError {
 public:
  using DomainError::DomainError;
};

// Requested travel-time target below what the corridor can deliver.
class InfeasibleTargetError : public DomainError {
 public:
  using DomainError::DomainError;
};

// Scenario / configuration validation failure.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A queried quantity is not determined inside the simulated horizon.
class HorizonError : public std::runtime_error {
 public:
  HorizonError(const std::string& what, double partial)
      : std::runtime_error(what), partial_(partial) {}
  // Best lower bound available when the horizon ran out.
  double partial() const noexcept { return partial_; }

 private:
  double partial_;
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw DomainError(msg);
}

}  // namespace vslr
