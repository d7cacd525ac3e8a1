#pragma once

#include <stdexcept>
#include <string>

namespace riskcause {

/// Malformed or inconsistent data: bad files, unknown ids, mismatched shapes.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// I/O failure: missing files, write errors, corruption, version mismatch.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numeric failure: non-finite loss, divergence.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace riskcause
