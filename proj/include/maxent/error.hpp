#pragma once

#include <stdexcept>
#include <string>

namespace maxent {

/// Base of every error raised by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite integrand value at a quadrature node.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, double node)
      : Error(what + " (at v = " + std::to_string(node) + ")"), node_(node) {}
  double node() const noexcept { return node_; }

 private:
  double node_;
};

class SaturationError : public Error {
 public:
  using Error::Error;
};

/// Cholesky failed even after the jitter ladder.
class ConditioningError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double last_gradient_norm)
      : Error(what), gradient_norm_(last_gradient_norm) {}
  double gradient_norm() const noexcept { return gradient_norm_; }

 private:
  double gradient_norm_;
};

class LineSearchError : public ConvergenceError {
 public:
  using ConvergenceError::ConvergenceError;
};

class DegenerateError : public Error {
 public:
  using Error::Error;
};

class ValidityError : public Error {
 public:
  using Error::Error;
};

class GenerationExhausted : public Error {
 public:
  GenerationExhausted(const std::string& what, double acceptance_rate)
      : Error(what), acceptance_rate_(acceptance_rate) {}
  double acceptance_rate() const noexcept { return acceptance_rate_; }

 private:
  double acceptance_rate_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line = -1)
      : Error(line >= 0 ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

class OptimizationError : public Error {
 public:
  using Error::Error;
};

/// Bad command-line usage; exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace maxent
