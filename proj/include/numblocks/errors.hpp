#pragma once

#include <stdexcept>
#include <string>

namespace numblocks {

// Argument outside the domain of an operation (bad target, malformed distribution, shape mismatch).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation called in a state where it is not allowed, e.g. stepping a finished episode.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TruncationError : public std::length_error {
 public:
  using std::length_error::length_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint written by an incompatible architecture, vocabulary or format version.
class IncompatibleCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace numblocks
