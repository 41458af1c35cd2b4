#pragma once

#include <stdexcept>
#include <string>

namespace refinery {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Caller handed us data that violates an operation's preconditions.
class InvalidInputError : public Error {
public:
  using Error::Error;
};

/// Batch statistics are undefined for the given batch (fewer than 2 samples).
class DegenerateBatchError : public InvalidInputError {
public:
  using InvalidInputError::InvalidInputError;
};

/// An operation was invoked out of sequence (e.g. backward without forward).
class ProtocolError : public Error {
public:
  using Error::Error;
};

/// An experiment or stage description is inconsistent.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// File missing, unreadable, or malformed on disk.
class IoError : public Error {
public:
  using Error::Error;
};

} // namespace refinery
