#pragma once

#include <stdexcept>
#include <string>

namespace edgedoc {

// Base class for all errors raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes passed to a primitive or block.
struct ShapeError : Error {
  using Error::Error;
};

// NaN/Inf produced, or a loss diverged.
struct NumericError : Error {
  using Error::Error;
};

// API misuse: backward on a consumed graph, non-scalar root, missing grad.
struct ContractError : Error {
  using Error::Error;
};

// File could not be read, written, or parsed.
struct IoError : Error {
  using Error::Error;
};

// Checkpoint does not match the model configuration.
struct CheckpointError : Error {
  using Error::Error;
};

// Record id sets disagree between two detectors.
struct IdMismatchError : Error {
  using Error::Error;
};

// Metric undefined on the given input (e.g. single-class ROC).
struct DegenerateEvalError : Error {
  using Error::Error;
};

}  // namespace edgedoc
