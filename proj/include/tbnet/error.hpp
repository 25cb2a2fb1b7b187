#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tbnet {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition (bad sizes, bad flags).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Malformed input bytes or text (PGM, manifest, checkpoint).
class DecodeError : public Error {
 public:
  using Error::Error;
};

/// Tensor or parameter shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A split request asked for more records than the manifest holds.
class SplitDeficitError : public Error {
 public:
  SplitDeficitError(std::size_t requested, std::size_t available)
      : Error("split requests " + std::to_string(requested) + " records but only " +
              std::to_string(available) + " are available (deficit " +
              std::to_string(requested - available) + ")"),
        requested_(requested),
        available_(available) {}

  std::size_t requested() const { return requested_; }
  std::size_t available() const { return available_; }
  std::size_t deficit() const { return requested_ - available_; }

 private:
  std::size_t requested_;
  std::size_t available_;
};

}  // namespace tbnet
