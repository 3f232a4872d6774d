#pragma once

#include <stdexcept>
#include <string>

namespace signglyph {

// Root of every exception thrown by the library. The CLI maps the three
// families below (configuration, I/O, data) onto distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration, flags, or hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Filesystem and stream failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent data: shapes, labels, file contents.
class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

class IndexError : public DataError {
 public:
  using DataError::DataError;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace signglyph
