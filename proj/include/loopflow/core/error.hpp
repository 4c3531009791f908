#pragma once

#include <stdexcept>
#include <string>

namespace loopflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments or configuration supplied by the caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Input data that violates a documented contract (malformed files,
/// referential integrity, conflicting duplicates, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Training failed, e.g. a non-finite loss.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace loopflow
