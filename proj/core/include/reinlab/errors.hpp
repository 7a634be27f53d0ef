#pragma once

#include <stdexcept>
#include <string>

#include "reinlab/scalar.hpp"

REINLAB_NAMESPACE_BEGIN

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand extents disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN or infinity where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters or incompatible configurations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Violated calling convention (wrong tensor rank, missing input, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed file content.
class ParseError : public Error {
 public:
  using Error::Error;
};

REINLAB_NAMESPACE_END
