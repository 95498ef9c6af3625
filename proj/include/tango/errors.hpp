#pragma once

#include <stdexcept>
#include <string>

namespace tango {

// Exit-code families used by the command line front end:
//   ConfigError            -> 2 (usage)
//   FormatError, DataError -> 3 (data / format)
//   NumericError           -> 4 (numeric)
// ShapeError and ContractError indicate programming or data mismatches and
// are reported as data errors.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace tango
