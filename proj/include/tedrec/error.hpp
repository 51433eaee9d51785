#pragma once

#include <stdexcept>
#include <string>

namespace tedrec {

// Base class for all engine errors. The CLI maps the subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Non-finite values, NaN losses, failed numerical contracts.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Missing files, bad headers, truncated binaries.
class IoError : public Error {
 public:
  using Error::Error;
};

// Well-formed input whose content cannot be used (too many malformed rows,
// empty five-core fixpoint, embedding/item count mismatch).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace tedrec
