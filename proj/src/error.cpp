#include "mlffn/error.hpp"

namespace mlffn {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::NonMonotonicTime: return "NonMonotonicTime";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::BadLabel: return "BadLabel";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::UnknownSignal: return "UnknownSignal";
    case ErrorCode::AuthError: return "AuthError";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::NetworkError: return "NetworkError";
    case ErrorCode::WrongDimension: return "WrongDimension";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EvenKernel: return "EvenKernel";
    case ErrorCode::DegenerateBatch: return "DegenerateBatch";
    case ErrorCode::BadRate: return "BadRate";
    case ErrorCode::VariantChannelMissing: return "VariantChannelMissing";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::NonfiniteLoss: return "NonfiniteLoss";
    case ErrorCode::FingerprintMismatch: return "FingerprintMismatch";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::UnknownVariant: return "UnknownVariant";
    case ErrorCode::Empty: return "Empty";
    case ErrorCode::ClassTooSmall: return "ClassTooSmall";
    case ErrorCode::BadSpec: return "BadSpec";
    case ErrorCode::TooFew: return "TooFew";
    case ErrorCode::UnknownFeature: return "UnknownFeature";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::AuthError:
    case ErrorCode::RateLimited:
    case ErrorCode::MalformedResponse:
    case ErrorCode::NetworkError:
    case ErrorCode::WrongDimension:
      return ErrorCategory::Network;
    case ErrorCode::NonfiniteLoss:
    case ErrorCode::DegenerateBatch:
      return ErrorCategory::Numeric;
    case ErrorCode::ConfigError:
    case ErrorCode::UnknownVariant:
    case ErrorCode::UnknownSignal:
    case ErrorCode::BadRate:
    case ErrorCode::EvenKernel:
    case ErrorCode::BadSpec:
    case ErrorCode::FingerprintMismatch:
    case ErrorCode::VersionMismatch:
      return ErrorCategory::Config;
    case ErrorCode::ShapeMismatch:
    case ErrorCode::VariantChannelMissing:
      return ErrorCategory::Internal;
    default:
      return ErrorCategory::Data;
  }
}

}  // namespace mlffn
