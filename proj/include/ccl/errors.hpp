#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ccl {

/// Shape disagreement between tensor operands.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Input outside an operation's mathematical domain (log of non-positive,
/// division by zero, empty softmax, zero-norm distance operand).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// A caller broke an API precondition (non-scalar loss, foreign tape, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed input file. Carries the 1-based line number when known.
struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, std::size_t line_number = 0)
      : std::runtime_error(line_number > 0 ? msg + " (line " + std::to_string(line_number) + ")"
                                           : msg),
        line(line_number) {}
  std::size_t line;
};

/// Bad configuration value or unknown key.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Item or row index outside a table's range.
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// A sampling request exceeds what the population can provide.
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Replacement augmentation could not find a valid substitute.
struct AugmentationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A ranking metric is undefined on the given inputs (e.g. single-class AUC).
struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File could not be read or written.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Optimizer aborted a step on a non-finite gradient.
struct GradientError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ccl
