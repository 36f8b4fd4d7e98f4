#include "cerberus/error.hpp"

namespace cerberus {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EmptyPerturbedSet: return "EmptyPerturbedSet";
    case ErrorCode::DuplicateRule: return "DuplicateRule";
    case ErrorCode::EmptyRuleText: return "EmptyRuleText";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::UnparseableResponse: return "UnparseableResponse";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::EmptyCaption: return "EmptyCaption";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::BadThresholds: return "BadThresholds";
    case ErrorCode::BadParams: return "BadParams";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::InsufficientCalibrationData: return "InsufficientCalibrationData";
    case ErrorCode::UnknownItem: return "UnknownItem";
    case ErrorCode::AlreadyDecided: return "AlreadyDecided";
    case ErrorCode::VersionConflict: return "VersionConflict";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::RatioNotReducible: return "RatioNotReducible";
    case ErrorCode::UnknownScene: return "UnknownScene";
    case ErrorCode::BindError: return "BindError";
    case ErrorCode::StoreCorrupt: return "StoreCorrupt";
  }
  return "Unknown";
}

}  // namespace cerberus
