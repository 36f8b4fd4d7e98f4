#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cerberus {

enum class ErrorCode {
  InvalidArgument,
  EmptyPerturbedSet,
  DuplicateRule,
  EmptyRuleText,
  IoError,
  SchemaVersionMismatch,
  CorruptFile,
  EmptyInput,
  BackendUnavailable,
  UnparseableResponse,
  MalformedResponse,
  EmptyCaption,
  DimensionMismatch,
  BadThresholds,
  BadParams,
  ZeroVector,
  EmptyPool,
  InsufficientCalibrationData,
  UnknownItem,
  AlreadyDecided,
  VersionConflict,
  SingleClass,
  LengthMismatch,
  RatioNotReducible,
  UnknownScene,
  BindError,
  StoreCorrupt,
};

std::string_view to_string(ErrorCode code);

// All library failures surface as this type; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cerberus
