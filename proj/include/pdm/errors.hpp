#ifndef PDM_ERRORS_HPP
#define PDM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace pdm {

// Bad or inconsistent configuration / input files. CLI exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure at runtime (divergence, NaN loss, ...). CLI exit code 3.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pdm

#endif
