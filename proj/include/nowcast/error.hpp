#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace nowcast {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller-supplied input violates a documented precondition
/// (bad flag value, overlapping ranges, wrong shapes...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A numeric value lies outside the domain an operation accepts.
class RangeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Tensor or grid dimensions do not agree.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Malformed RFG1/RFP1 payload. Carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Training diverged. Carries the 0-based epoch and batch where the loss
/// stopped being finite.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch, int batch)
      : Error(what + " (epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ")"),
        epoch_(epoch),
        batch_(batch) {}

  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

/// File system failure (cannot open, cannot write).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace nowcast
