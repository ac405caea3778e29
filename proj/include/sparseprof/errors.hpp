#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace sparseprof {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data. `offset` is the byte position the decoder was at.
class FormatError : public Error {
 public:
  FormatError(std::string what, std::uint64_t offset)
      : Error(what + " at offset " + std::to_string(offset)), reason_(std::move(what)), offset_(offset) {}

  const std::string& reason() const { return reason_; }
  std::uint64_t offset() const { return offset_; }

 private:
  std::string reason_;
  std::uint64_t offset_;
};

/// Structurally valid request naming something that does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// One or more input files failed validation; the message lists them.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// An internal invariant was violated; indicates a bug, not bad input.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace sparseprof
