#pragma once

#include <stdexcept>
#include <string>

namespace kamim {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller-supplied argument violates an operation's precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Tensor operands have incompatible shapes.
class ShapeError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// A binary file or text document could not be parsed.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration key, value or override.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Numerical failure during training (non-finite gradients, overflow).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace kamim
