#pragma once

#include <stdexcept>
#include <string>

namespace crf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments: axis out of range, valence mismatch, grids that differ.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Parameter outside the regime the model is defined for (e.g. s0 >= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Metric is not symmetric positive definite, or is too close to degenerate.
class GeometryError : public Error {
 public:
  using Error::Error;
};

class NormalizationError : public Error {
 public:
  using Error::Error;
};

class StepError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace crf
