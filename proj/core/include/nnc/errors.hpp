#pragma once

#include <stdexcept>
#include <string>

namespace nnc {

/// Root of the library's error hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition violation: bad mode index, rank out of range, shape mismatch.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Input carries no usable signal (e.g. an all-zero weight matrix).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

/// Relative error against a zero-norm reference.
class UndefinedRatio : public Error {
 public:
  using Error::Error;
};

/// Graph transform hit a layer arrangement it does not support
/// (e.g. batch norm with no convolution or FC in front of it).
class UnsupportedTopology : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Model manifest is not parseable or references an unknown layer type.
class MalformedManifest : public Error {
 public:
  using Error::Error;
};

/// Stored checksum or blob length does not match the data on disk.
class ChecksumMismatch : public Error {
 public:
  using Error::Error;
};

/// Manifest declares a format version this build does not understand.
class UnknownVersion : public Error {
 public:
  using Error::Error;
};

/// The requested operation has no work to perform
/// (e.g. compressing a model with no decomposable layers).
class NothingToDo : public Error {
 public:
  using Error::Error;
};

}  // namespace nnc
