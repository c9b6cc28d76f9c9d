#pragma once

#include <stdexcept>
#include <string>

namespace epmvg {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shapes or dimensions do not line up.
struct ShapeError : Error {
  using Error::Error;
};

// A numeric parameter is out of its valid domain (eps <= 0, h == 0, ...).
struct ParamError : Error {
  using Error::Error;
};

// Invalid input data (token id out of range, missing file, bad pixel).
struct DataError : Error {
  using Error::Error;
};

// An API precondition was violated (non-scalar loss, mismatched state, ...).
struct ContractError : Error {
  using Error::Error;
};

// Bad configuration (unknown key, unknown mode, empty split).
struct ConfigError : Error {
  using Error::Error;
};

// On-disk format problems: wrong magic, version, truncation, parse failures.
struct FormatError : Error {
  using Error::Error;
};

// A forward op produced NaN/Inf. Non-finite values are crash conditions.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace epmvg
