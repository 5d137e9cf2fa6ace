#pragma once

#include <stdexcept>
#include <string>

namespace oca {

/// Violated shape/index/structure contract (wrong dims, bad label, ...).
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file or stream could not be parsed.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerically unusable values (non-finite entries, zero norms, divergence).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API called out of order (stale caches, missing prerequisite state).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration or command usage.
class ConfigError : public UsageError {
 public:
  using UsageError::UsageError;
};

}  // namespace oca
