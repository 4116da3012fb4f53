#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mlffn {

// Coarse failure classes; the numeric values double as CLI exit codes.
enum class ErrorCategory : int {
  Internal = 1,
  Config = 2,
  Data = 3,
  Network = 4,
  Numeric = 5,
};

enum class ErrorCode {
  // ingest
  MissingColumn,
  NonFiniteValue,
  TooShort,
  NonMonotonicTime,
  ParseError,
  BadLabel,
  // features
  LengthMismatch,
  DimensionMismatch,
  EmptyTrainingSet,
  UnknownSignal,
  // semantic / embed
  AuthError,
  RateLimited,
  MalformedResponse,
  NetworkError,
  WrongDimension,
  EmptyText,
  // nncore
  ShapeMismatch,
  EvenKernel,
  DegenerateBatch,
  BadRate,
  // model
  VariantChannelMissing,
  EmptySplit,
  NonfiniteLoss,
  FingerprintMismatch,
  CorruptCheckpoint,
  VersionMismatch,
  UnknownVariant,
  // eval
  Empty,
  ClassTooSmall,
  BadSpec,
  TooFew,
  UnknownFeature,
  // config / io
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code);
ErrorCategory category_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  // Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
  std::string detail_;
};

// Carries the offending row so callers can report it.
class NonFiniteValueError : public Error {
 public:
  NonFiniteValueError(std::size_t row, const std::string& column)
      : Error(ErrorCode::NonFiniteValue,
              "column '" + column + "' row " + std::to_string(row)),
        row_(row),
        column_(column) {}

  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

class NonfiniteLossError : public Error {
 public:
  NonfiniteLossError(int epoch, std::size_t batch)
      : Error(ErrorCode::NonfiniteLoss, "epoch " + std::to_string(epoch) +
                                            " batch " + std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}

  int epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  int epoch_;
  std::size_t batch_;
};

}  // namespace mlffn
