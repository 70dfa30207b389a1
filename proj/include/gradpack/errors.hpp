#pragma once

#include <stdexcept>
#include <string>

namespace gradpack {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not compose.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid layer geometry, model/data combination, or option value.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

// The layer (or loss) does not implement what an extension asked for.
class UnsupportedOperation : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// Non-positive denominators or singular damped factors in the optimizer.
class DampingError : public Error {
 public:
  using Error::Error;
};

}  // namespace gradpack
