#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace kronembed {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A byte sequence that is empty (before or after truncation) cannot be encoded.
class EmptyTokenError : public Error {
 public:
  explicit EmptyTokenError(std::optional<std::uint32_t> token_id = std::nullopt)
      : Error(token_id ? "empty byte sequence for token id " + std::to_string(*token_id)
                       : std::string("empty byte sequence")),
        token_id_(token_id) {}

  std::optional<std::uint32_t> token_id() const noexcept { return token_id_; }

 private:
  std::optional<std::uint32_t> token_id_;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or piece string.
class FormatError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Statistics that are undefined on the given input (zero variance, zero norm).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// An operation was asked to run in a mode the input does not support.
class ModeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace kronembed
