#pragma once

#include <stdexcept>
#include <string>

namespace rrt {

// Base class for every error the library raises. The CLI maps subclasses
// onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed, truncated or inconsistent files and records.
class FormatError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autograd tape (double backward, non-scalar loss, ...).
class GraphError : public Error {
 public:
  using Error::Error;
};

}  // namespace rrt
