#pragma once

#include <stdexcept>
#include <string>

namespace bhpeft {

/// Shape disagreement between tensor operands.
struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration value (bad hyperparameter, unknown key, ...).
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid runtime input (token out of range, malformed data file, ...).
struct input_error : std::runtime_error {
  explicit input_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// File I/O or serialization failure.
struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure during optimization (non-finite loss).
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace bhpeft
