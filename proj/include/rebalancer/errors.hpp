#pragma once

#include <stdexcept>
#include <string>

namespace rebalancer {

// Failure categories shared across the library. The CLI maps these onto
// process exit codes: input/data problems vs. validation problems.
enum class ErrorCode {
  MissingColumn,
  EmptyFile,
  UnparseableDate,
  AllMissingColumn,
  TooFewRows,
  EmptyFitRange,
  InsufficientHistory,
  TooFewSamples,
  TooFewAssets,
  UnknownTicker,
  UnknownPathNode,
  DuplicateEdge,
  AsymmetricInput,
  ShapeMismatch,
  EmptySplit,
  DivergedLoss,
  VersionMismatch,
  CorruptFile,
  TickerMismatch,
  NoPath,
  GraphTooLarge,
  InvalidPosition,
  ZeroVariance,
  LengthMismatch,
  EmptyInput,
  IoFailure,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::UnparseableDate: return "UnparseableDate";
    case ErrorCode::AllMissingColumn: return "AllMissingColumn";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::EmptyFitRange: return "EmptyFitRange";
    case ErrorCode::InsufficientHistory: return "InsufficientHistory";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::TooFewAssets: return "TooFewAssets";
    case ErrorCode::UnknownTicker: return "UnknownTicker";
    case ErrorCode::UnknownPathNode: return "UnknownPathNode";
    case ErrorCode::DuplicateEdge: return "DuplicateEdge";
    case ErrorCode::AsymmetricInput: return "AsymmetricInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::TickerMismatch: return "TickerMismatch";
    case ErrorCode::NoPath: return "NoPath";
    case ErrorCode::GraphTooLarge: return "GraphTooLarge";
    case ErrorCode::InvalidPosition: return "InvalidPosition";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::IoFailure: return "IoFailure";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rebalancer
