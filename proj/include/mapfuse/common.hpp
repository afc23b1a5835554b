#pragma once

#include <stdexcept>
#include <string>

namespace mapfuse {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File could not be read or written.
struct IoError : Error {
  using Error::Error;
};

// File content is not in a supported format (bit depth, magic, color type).
struct FormatError : Error {
  using Error::Error;
};

// Tensor/image dimensions violate an operation's contract.
struct ShapeError : Error {
  using Error::Error;
};

// Bad configuration value (unknown rule, unknown metric, missing parameter).
struct ConfigError : Error {
  using Error::Error;
};

// Serialized state is corrupt or truncated.
struct IntegrityError : Error {
  using Error::Error;
};

// Valid state that does not match the requested configuration.
struct CompatError : Error {
  using Error::Error;
};

}  // namespace mapfuse
