#pragma once

#include <stdexcept>
#include <string>

namespace sbglm {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed files, invalid parameters, mismatched dimensions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine could not proceed (factorization failure, etc.).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace sbglm
