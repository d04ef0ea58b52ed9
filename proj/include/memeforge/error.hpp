#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace memeforge {

enum class ErrorCode {
  InvalidArgument,
  IoError,
  MalformedLine,
  DuplicateId,
  DecodeError,
  UnsupportedFormat,
  RectOutOfBounds,
  EmptyInput,
  DimensionMismatch,
  ZeroVector,
  BadBinCount,
  ImageTooSmall,
  LengthMismatch,
  CorruptStore,
  KindMismatch,
  KeypointOutOfBounds,
  EmptyReference,
  MetricFeatureMismatch,
  TooFewSamples,
  RadiusUnset,
  SingleClass,
  NonFiniteLoss,
  DegenerateImage,
  NonFinite,
  ZeroCoefficients,
  TooFewPoints,
  MissingMedoid,
  UnknownId,
  MissingTruth,
  RaggedTable,
  UnknownMethod,
  MissingInput,
  UnknownAnnotator,
  UnknownTask,
  MalformedVerdict,
  InsufficientJudgments,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI, the HTTP layer) can map it to an exit status or a
/// response without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace memeforge
