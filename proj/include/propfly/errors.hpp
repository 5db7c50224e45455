#pragma once

#include <stdexcept>
#include <string>

namespace propfly {

// Root of every error raised by the library. Subclasses name the contract
// that was violated so callers (and the CLI exit-code mapping) can tell
// them apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class NumericsError : public Error {
 public:
  using Error::Error;
};

class IdError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IOError : public Error {
 public:
  using Error::Error;
};

// Checkpoint decoding failures, one type per failure mode.
class CheckpointError : public IOError {
 public:
  using IOError::IOError;
};
class TruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class MagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class VersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class RoleError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace propfly
