#pragma once

#include <stdexcept>
#include <string>

namespace fastadd {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mismatched tensor/parameter dimensions.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid configuration (bad field values, unknown keys, missing settings).
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite values or other numeric breakdowns.
struct NumericError : Error {
  using Error::Error;
};

// Bad user-supplied inputs (token ids, labels, empty sequences).
struct InputError : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  using Error::Error;
};

// Magic/header cannot be parsed.
struct CheckpointFormatError : CheckpointError {
  using CheckpointError::CheckpointError;
};

// Header parses but parameter shapes disagree with the config.
struct CheckpointShapeError : CheckpointError {
  using CheckpointError::CheckpointError;
};

// Payload shorter than the header promises.
struct CheckpointTruncatedError : CheckpointError {
  using CheckpointError::CheckpointError;
};

}  // namespace fastadd
