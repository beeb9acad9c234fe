#pragma once

#include <stdexcept>
#include <string>

namespace sni {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A NoiseStructure, or something built against one, is malformed or mismatched.
class StructureError : public Error {
 public:
  using Error::Error;
};

/// Tensor / vector dimensions do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller-supplied argument is out of its documented domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// The network produced non-finite values.
class ModelFailure : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace sni
