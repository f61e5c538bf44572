#pragma once

#include <stdexcept>
#include <string>

namespace lasi {

// Error taxonomy maps onto CLI exit codes: ConfigError -> 2,
// DataError -> 3, DivergenceError -> 4, anything else -> 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace lasi
