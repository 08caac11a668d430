#pragma once

#include <stdexcept>
#include <string>

namespace simil {

// Root of every error raised by the library. The CLI maps subclasses to exit
// codes, so new error kinds should derive from the closest existing one.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

// Misuse of an API contract (backward twice, missing saved state, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace simil
