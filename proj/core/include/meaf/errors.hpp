#pragma once

#include <stdexcept>
#include <string>

namespace meaf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid scalar argument (stride 0, negative threshold, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input data (images, labels, configs).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values detected during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint written by an incompatible format version or with a bad magic.
class IncompatibleCheckpointError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint file truncated or otherwise unreadable.
class CorruptCheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace meaf
