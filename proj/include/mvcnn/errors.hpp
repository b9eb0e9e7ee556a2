#pragma once

#include <stdexcept>
#include <string>

namespace mvcnn {

// Shape or axis mismatch between an operation and its inputs.
class DimensionError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid model or layer configuration (plan underflow, bad layer name, ...).
class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Hyperparameter outside its valid range.
class ParameterError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Batch statistics requested over fewer than two values.
class DegenerateBatchError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed label (non-one-hot row, out-of-range class index).
class LabelError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dataset-level failure: missing classes, undecodable files, bad manifests.
class DataError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unreadable or corrupt checkpoint file; the message carries the byte offset.
class CheckpointError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A cached view stack does not match the requested combination or parameters.
class StaleCacheError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mvcnn
