#pragma once

#include <stdexcept>
#include <string>

namespace psst {

// Shape or dimension disagreement between operands.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// Operand outside the mathematical domain of an operation.
struct DomainError : std::domain_error {
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

// API contract violated by the caller (wrong node kind, missing context).
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Structurally valid input that is degenerate for the requested operation,
// e.g. a zero vector handed to cosine similarity.
struct DegenerateInputError : std::invalid_argument {
  explicit DegenerateInputError(const std::string& what)
      : std::invalid_argument(what) {}
};

// A computation produced a non-finite value.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid configuration (world, run, or estimator settings).
struct ConfigError : std::invalid_argument {
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Problem instance too large for exhaustive treatment.
struct SizeError : std::length_error {
  explicit SizeError(const std::string& what) : std::length_error(what) {}
};

// File or stream level failure (checkpoints, world files, CSV).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace psst
