#pragma once

#include <stdexcept>
#include <string>

namespace vast {

// Error categories map onto CLI exit codes: ConfigError/usage -> 1,
// ParseError/ValidationError -> 2, TrainError -> 3, IoError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct TrainError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

}  // namespace vast
