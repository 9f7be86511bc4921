#pragma once

#include <stdexcept>
#include <string>

namespace spikeformer {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or rank disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid model / training / attention configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable dataset input.
class DataError : public Error {
 public:
  using Error::Error;
};

class InstrumentationError : public Error {
 public:
  using Error::Error;
};

// Checkpoint load/save failure. `kind` separates a foreign or corrupted
// header, a file that ends early, and a model whose tensors do not match.
class CheckpointError : public Error {
 public:
  enum class Kind { Io, Format, Truncated, Shape };
  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Raised by the training loop when the loss becomes non-finite.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace spikeformer
