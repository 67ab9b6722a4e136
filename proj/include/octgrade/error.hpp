#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace octgrade {

enum class ErrorCode {
  // dataset
  EmptyDataset,
  InvalidGrade,
  MissingImage,
  DuplicateImageId,
  NotGrayscale,
  InvalidConfig,
  BadManifest,
  LabelLeakage,
  // splits
  InsufficientPatients,
  InvalidFraction,
  EmptySide,
  BadFoldIndex,
  // model
  ShapeMismatch,
  UnknownBackbone,
  NonFiniteLogit,
  // train
  NotOneHot,
  UnlabeledSample,
  EmptyTrainSet,
  // pseudolabel
  EmptyPool,
  CoverageMismatch,
  MissingTruth,
  // metrics
  LengthMismatch,
  Empty,
  EmptyMatrix,
  SingleClassDegenerate,
  // orchestrate
  UnknownMode,
  MismatchedTestSplit,
  // io
  IoFailure,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Domain error raised by every module. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace octgrade
