#pragma once

#include <stdexcept>
#include <string>

namespace multipod {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A scalar or enumerated argument is outside its valid domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// An object is not in the state the call requires (missing gradient,
/// uninitialized running statistics, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Reading a dataset, checkpoint or image failed. The message names the file
/// and, where applicable, the offset or field.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint was written for a different model spec than the one it is
/// being loaded into.
class SpecMismatchError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace multipod
