#pragma once

#include <stdexcept>
#include <string>

namespace featreplay {

/// Invalid configuration (shapes, hyper-parameters, malformed config files).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data violating an operation's precondition.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation invoked in the wrong lifecycle state (untrained model, missing calibration, ...).
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset too small to be partitioned.
class SplitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace featreplay
