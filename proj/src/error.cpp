#include "plume/error.hpp"

namespace plume {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BandMissing: return "BandMissing";
    case ErrorCode::ExtentTooSmall: return "ExtentTooSmall";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::InvalidFactor: return "InvalidFactor";
    case ErrorCode::CropTooLarge: return "CropTooLarge";
    case ErrorCode::MaskNotBinary: return "MaskNotBinary";
    case ErrorCode::ManifestError: return "ManifestError";
    case ErrorCode::LabelMaskConflict: return "LabelMaskConflict";
    case ErrorCode::TooFewSites: return "TooFewSites";
    case ErrorCode::CannotBalance: return "CannotBalance";
    case ErrorCode::NonSquare: return "NonSquare";
    case ErrorCode::PairMismatch: return "PairMismatch";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::ArchMismatch: return "ArchMismatch";
    case ErrorCode::InvalidTarget: return "InvalidTarget";
    case ErrorCode::TrainingDiverged: return "TrainingDiverged";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyEvaluation: return "EmptyEvaluation";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UsageError: return "UsageError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace plume
