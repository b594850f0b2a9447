#pragma once

#include <stdexcept>
#include <string>

namespace manner {

// Exception taxonomy. Each class maps onto one CLI exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 2; }
  virtual const char* tag() const noexcept { return "error"; }
};

class UsageError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
  const char* tag() const noexcept override { return "usage"; }
};

class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
  const char* tag() const noexcept override { return "data"; }
};

class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
  const char* tag() const noexcept override { return "numerical"; }
};

}  // namespace manner
