#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sqgan {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or size disagreement between operands.
struct DimensionError : Error {
  using Error::Error;
};

// Math domain violation, e.g. log of a non-positive entry.
struct DomainError : Error {
  DomainError(const std::string& what, std::size_t index)
      : Error(what + " at index " + std::to_string(index)), index(index) {}
  std::size_t index;
};

struct AxisError : Error {
  using Error::Error;
};

struct DegenerateProjectionError : Error {
  explicit DegenerateProjectionError(std::size_t row)
      : Error("projected code norm below 1e-12 at codebook row " + std::to_string(row)),
        row(row) {}
  std::size_t row;
};

struct InvalidMarginalError : Error {
  using Error::Error;
};

struct KernelUnderflowError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Non-finite loss during training or codebook initialization.
struct NumericAbort : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  using Error::Error;
};
struct ChecksumError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct VersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct TruncatedError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct FormatError : CheckpointError {
  using CheckpointError::CheckpointError;
};

}  // namespace sqgan
