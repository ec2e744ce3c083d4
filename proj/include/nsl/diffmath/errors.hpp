#pragma once

#include <stdexcept>
#include <string>

namespace nsl {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A user-facing setting is out of range or inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A file does not follow its declared format.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A checkpoint or file was written by an incompatible configuration/version.
class VersionError : public Error {
 public:
  using Error::Error;
};

// A training step produced a non-finite value.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace nsl
