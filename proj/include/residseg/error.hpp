#pragma once

#include <stdexcept>
#include <string>

namespace residseg {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor dimension or image size disagreement.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset content violates a labelling or layout rule.
class DataError : public Error {
 public:
  enum class Kind {
    kMissingManifest,
    kMissingFile,
    kMaskOnBenign,
    kMissingMask,
    kSizeMismatch,
    kMalformed,
    kEmpty,
    kWrongPhase,
  };

  DataError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Checkpoint file unreadable or incompatible with the target model.
class CheckpointError : public Error {
 public:
  enum class Kind { kIo, kMagic, kVersion, kTruncated, kNameMismatch, kShapeMismatch, kFingerprint };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace residseg
