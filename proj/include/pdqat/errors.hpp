// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pdqat {

/// Root of every error raised by the library. Callers that only need to
/// distinguish "our" failures from everything else catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An operation was called in the wrong order (e.g. backward with no cache).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Bad argument values: out-of-range labels, empty datasets, unknown ids.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of a pure function was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared during training or evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. `offset` is a byte offset for binary formats and
/// a 1-based line number for text formats; `npos` when not applicable.
class FormatError : public Error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  explicit FormatError(const std::string& what, std::size_t offset = npos)
      : Error(what), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class UnsupportedVersionError : public FormatError {
 public:
  UnsupportedVersionError(const std::string& what, unsigned found)
      : FormatError(what), found_(found) {}

  unsigned found() const noexcept { return found_; }

 private:
  unsigned found_;
};

}  // namespace pdqat
