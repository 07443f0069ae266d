#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace plume {

enum class ErrorCode {
  // raster_io
  BandMissing,
  ExtentTooSmall,
  FormatError,
  InvalidFactor,
  CropTooLarge,
  MaskNotBinary,
  // catalog
  ManifestError,
  LabelMaskConflict,
  TooFewSites,
  CannotBalance,
  // augment
  NonSquare,
  PairMismatch,
  // models
  CorruptCheckpoint,
  ArchMismatch,
  // training
  InvalidTarget,
  TrainingDiverged,
  // metrics / viz
  LengthMismatch,
  EmptyEvaluation,
  ShapeMismatch,
  // cli
  UsageError,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Every failure surfaced by the library carries one of the codes above so
/// callers (and the CLI exit path) can branch on the kind without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace plume
