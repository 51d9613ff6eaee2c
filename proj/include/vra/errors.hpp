#pragma once

#include <stdexcept>
#include <string>

namespace vra {

// Malformed shapes, inconsistent layer chains, empty inputs.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NeuronRef / surface indices out of range.
struct AddressingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// On-disk format violations (model files, IDX, CSV, manifests).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Fixture training failures (divergence).
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid analysis/run configuration values.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace vra
