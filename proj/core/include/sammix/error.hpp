#pragma once

#include <stdexcept>
#include <string>

namespace sammix {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Bad argument or precondition violated by the caller.
class ArgumentError : public Error {
  public:
    using Error::Error;
};

/// Model or pipeline configuration is inconsistent.
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// Input data violates an invariant (non-finite voxel, label/mask disagreement, ...).
class DataIntegrityError : public Error {
  public:
    using Error::Error;
};

/// On-disk payload size disagrees with its header.
class ShapeMismatchError : public Error {
  public:
    using Error::Error;
};

/// Header or sidecar could not be parsed.
class FormatError : public Error {
  public:
    using Error::Error;
};

/// Header declares a format version this build cannot read.
class VersionError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
  public:
    using Error::Error;
};

} // namespace sammix
