#include "filtrank/error.hpp"

namespace filtrank {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::IOFailure: return "IOFailure";
    case ErrorCode::ZeroDimension: return "ZeroDimension";
    case ErrorCode::CropLargerThanImage: return "CropLargerThanImage";
    case ErrorCode::UnknownFilter: return "UnknownFilter";
    case ErrorCode::CatalogError: return "CatalogError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::LossNotScalar: return "LossNotScalar";
    case ErrorCode::CheckpointError: return "CheckpointError";
    case ErrorCode::IncompatibleInputSize: return "IncompatibleInputSize";
    case ErrorCode::NoCategoryHead: return "NoCategoryHead";
    case ErrorCode::MissingFusionLayer: return "MissingFusionLayer";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::InvalidDesign: return "InvalidDesign";
    case ErrorCode::IncompleteLabels: return "IncompleteLabels";
    case ErrorCode::ErrorVerdictPresent: return "ErrorVerdictPresent";
    case ErrorCode::TooFewReferences: return "TooFewReferences";
    case ErrorCode::MissingFilteredImage: return "MissingFilteredImage";
    case ErrorCode::DataLeakage: return "DataLeakage";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::ModelModeMismatch: return "ModelModeMismatch";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::EmptySource: return "EmptySource";
    case ErrorCode::InsufficientPendingPairs: return "InsufficientPendingPairs";
    case ErrorCode::UnknownHit: return "UnknownHit";
    case ErrorCode::AlreadyClosed: return "AlreadyClosed";
    case ErrorCode::UsageError: return "UsageError";
  }
  return "Unknown";
}

}  // namespace filtrank
