#pragma once

#include <stdexcept>
#include <string>

namespace fvae {

// Base class for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor-op shape violations; the message names the op and the offending shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Non-finite values or out-of-domain numerics.
struct ValueError : Error {
  using Error::Error;
};

// Invalid configuration documents, fields or command usage.
struct ConfigError : Error {
  using Error::Error;
};

// File-format and serialization problems.
struct IoError : Error {
  using Error::Error;
};

}  // namespace fvae
