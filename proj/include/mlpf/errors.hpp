#pragma once

#include <stdexcept>
#include <string>

#include "mlpf/state.hpp"

namespace mlpf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (mismatched lengths, missing level, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Query outside the domain an object was built for.
class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class BudgetError : public Error {
 public:
  BudgetError(const std::string& what, int level) : Error(what), level_(level) {}
  int level() const { return level_; }

 private:
  int level_;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

/// Base for failures of the numerical machinery; the CLI maps these to exit code 3.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Non-finite field evaluation during a discretized flow.
class NumericFailure : public NumericError {
 public:
  NumericFailure(const std::string& what, double time, HybridState state)
      : NumericError(what + " at t=" + std::to_string(time) + " state=" + describe(state)),
        time_(time),
        state_(std::move(state)) {}
  double time() const { return time_; }
  const HybridState& state() const { return state_; }

 private:
  double time_;
  HybridState state_;
};

/// The jump rate exceeded the declared bound, or the state left the box on which the bound holds.
class RateBoundViolation : public NumericError {
 public:
  RateBoundViolation(const std::string& what, double time, HybridState state, double rate, double bound)
      : NumericError(what + " at t=" + std::to_string(time) + " state=" + describe(state) +
                     " rate=" + std::to_string(rate) + " bound=" + std::to_string(bound)),
        time_(time),
        state_(std::move(state)),
        rate_(rate),
        bound_(bound) {}
  double time() const { return time_; }
  const HybridState& state() const { return state_; }
  double rate() const { return rate_; }
  double bound() const { return bound_; }

 private:
  double time_;
  HybridState state_;
  double rate_;
  double bound_;
};

/// Coarse rejection factor 1 - rate/bound is not positive: the coarse law is not absolutely continuous.
class MeasureSingularity : public NumericError {
 public:
  using NumericError::NumericError;
};

class DegenerateWeights : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Every particle weight underflowed.
class FilterCollapse : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace mlpf
