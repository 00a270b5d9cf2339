#pragma once

#include <stdexcept>
#include <string>

namespace mmf {

// Contract and validation failures. The CLI maps everything except IoError to
// exit code 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ContractError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Malformed or out-of-domain input data (manifest rows, feature files, labels).
struct DataError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Non-finite training loss.
struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace mmf
