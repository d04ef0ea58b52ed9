#include "memeforge/error.hpp"

namespace memeforge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::RectOutOfBounds: return "RectOutOfBounds";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::BadBinCount: return "BadBinCount";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::CorruptStore: return "CorruptStore";
    case ErrorCode::KindMismatch: return "KindMismatch";
    case ErrorCode::KeypointOutOfBounds: return "KeypointOutOfBounds";
    case ErrorCode::EmptyReference: return "EmptyReference";
    case ErrorCode::MetricFeatureMismatch: return "MetricFeatureMismatch";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::RadiusUnset: return "RadiusUnset";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::DegenerateImage: return "DegenerateImage";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::ZeroCoefficients: return "ZeroCoefficients";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::MissingMedoid: return "MissingMedoid";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::MissingTruth: return "MissingTruth";
    case ErrorCode::RaggedTable: return "RaggedTable";
    case ErrorCode::UnknownMethod: return "UnknownMethod";
    case ErrorCode::MissingInput: return "MissingInput";
    case ErrorCode::UnknownAnnotator: return "UnknownAnnotator";
    case ErrorCode::UnknownTask: return "UnknownTask";
    case ErrorCode::MalformedVerdict: return "MalformedVerdict";
    case ErrorCode::InsufficientJudgments: return "InsufficientJudgments";
  }
  return "Unknown";
}

}  // namespace memeforge
