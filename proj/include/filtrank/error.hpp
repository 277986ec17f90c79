#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace filtrank {

// Every failure the library reports carries one of these codes so callers
// (CLI, HTTP service, Python) can map it without parsing messages.
enum class ErrorCode {
  MissingFile,
  DecodeError,
  IOFailure,
  ZeroDimension,
  CropLargerThanImage,
  UnknownFilter,
  CatalogError,
  ShapeMismatch,
  NonFiniteValue,
  LossNotScalar,
  CheckpointError,
  IncompatibleInputSize,
  NoCategoryHead,
  MissingFusionLayer,
  DimMismatch,
  LabelOutOfRange,
  InvalidDesign,
  IncompleteLabels,
  ErrorVerdictPresent,
  TooFewReferences,
  MissingFilteredImage,
  DataLeakage,
  DivergenceDetected,
  ConfigError,
  ModelModeMismatch,
  MissingGroundTruth,
  EmptySource,
  InsufficientPendingPairs,
  UnknownHit,
  AlreadyClosed,
  UsageError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace filtrank
