#pragma once

#include <stdexcept>
#include <string>

namespace tacos {

/// Invalid or inconsistent configuration values.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed, truncated or inconsistent input data.
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Failure while a run is executing (I/O on outputs, checkpoint mismatch, ...).
class RuntimeError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace tacos
