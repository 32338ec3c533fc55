#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace igapod {

// Argument outside the mathematical domain of an operation (e.g. xi outside [0,1]).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Invalid configuration value (quadrature order, harmonic count, training settings).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Design parameters that do not yield a feasible machine geometry.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Wrong use of an API or of incompatible artifacts (hash mismatch, bad input).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical failure: singular systems, divergence, non-convergence.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fixed-point iteration that did not reach its tolerance; carries the update norms.
class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, std::vector<double> history)
      : NumericalError(what), history_(std::move(history)) {}
  const std::vector<double>& history() const { return history_; }

 private:
  std::vector<double> history_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace igapod
