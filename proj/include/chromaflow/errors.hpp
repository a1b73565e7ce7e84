#pragma once

#include <stdexcept>
#include <string>

namespace chromaflow {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes disagree with an operation's requirements.
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// An index (class label, channel, ...) is out of range.
struct IndexError : Error {
  explicit IndexError(const std::string& msg) : Error(msg) {}
};

// backward() called again on a graph whose gradients were not reset.
struct AccumulationError : Error {
  explicit AccumulationError(const std::string& msg) : Error(msg) {}
};

// A binary file (CWGT, CFLW, PPM, CIFAR batch, report) is malformed.
struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Input data violates a contract (empty set, manifest mismatch, ...).
struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Attack/engine configuration is inconsistent with the requested operation.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// A public operation produced a non-finite scalar.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace chromaflow
