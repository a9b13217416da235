#pragma once

#include <stdexcept>
#include <string>

namespace msfa {

/// Tensor shapes or spatial sizes that violate an operation's contract.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration values (even kernels, unknown keys, bad ranges).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Input data that is well-shaped but has invalid content (non-binary masks).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Checkpoint produced by an incompatible format or architecture.
struct VersionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised by the trainer when the loss becomes NaN or infinite.
struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace msfa
