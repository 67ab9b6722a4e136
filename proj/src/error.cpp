#include "octgrade/error.hpp"

namespace octgrade {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::InvalidGrade: return "InvalidGrade";
    case ErrorCode::MissingImage: return "MissingImage";
    case ErrorCode::DuplicateImageId: return "DuplicateImageId";
    case ErrorCode::NotGrayscale: return "NotGrayscale";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::BadManifest: return "BadManifest";
    case ErrorCode::LabelLeakage: return "LabelLeakage";
    case ErrorCode::InsufficientPatients: return "InsufficientPatients";
    case ErrorCode::InvalidFraction: return "InvalidFraction";
    case ErrorCode::EmptySide: return "EmptySide";
    case ErrorCode::BadFoldIndex: return "BadFoldIndex";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownBackbone: return "UnknownBackbone";
    case ErrorCode::NonFiniteLogit: return "NonFiniteLogit";
    case ErrorCode::NotOneHot: return "NotOneHot";
    case ErrorCode::UnlabeledSample: return "UnlabeledSample";
    case ErrorCode::EmptyTrainSet: return "EmptyTrainSet";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::CoverageMismatch: return "CoverageMismatch";
    case ErrorCode::MissingTruth: return "MissingTruth";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::Empty: return "Empty";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::SingleClassDegenerate: return "SingleClassDegenerate";
    case ErrorCode::UnknownMode: return "UnknownMode";
    case ErrorCode::MismatchedTestSplit: return "MismatchedTestSplit";
    case ErrorCode::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

}  // namespace octgrade
