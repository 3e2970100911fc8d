#pragma once

#include <stdexcept>
#include <string>

namespace lgcnn {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer shapes that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value outside the domain of an operation (zero divisor, bad label, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input: model specs, config files, delimited data.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Unreadable/unwritable files and corrupt binary containers.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Misuse of a stateful object, e.g. backward without a recorded forward.
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace lgcnn
