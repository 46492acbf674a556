#pragma once

#include <stdexcept>
#include <string>

namespace mimnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/inf inputs, guarded divisions, non-finite losses.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed user-supplied data (empty captions, invalid attention rows, bad counts).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an API precondition (non-scalar backward, untrained scorer, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or incompatible files: bad magic, unknown versions, I/O failures.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace mimnet
