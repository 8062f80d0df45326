#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vmt {

/// Operand shapes or arities do not fit the operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Misuse of the autodiff graph (non-scalar loss, reused graph, ...).
class AutogradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (files, manifests, token streams).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary parse failure that knows where it happened.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace vmt
