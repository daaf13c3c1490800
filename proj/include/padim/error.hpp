#pragma once

#include <stdexcept>
#include <string>

namespace padim {

/// Invalid user configuration (bad flags, inconsistent options).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data: files, shapes, datasets.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical or runtime failure (factorization, inference).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace padim
