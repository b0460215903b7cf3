#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace secmlops {

enum class ErrorKind {
  kInvalidConfig,
  kDegenerateBox,
  kShapeMismatch,
  kNonFiniteInput,
  kLossNotScalar,
  kMissingGradient,
  kCenterOutsideGrid,
  kEmptySplit,
  kDiverged,
  kAlphaOutOfRange,
  kNonFiniteGradient,
  kNoPositiveCell,
  kZeroGradient,
  kBatchTooSmall,
  kNoGroundTruth,
  kInvalidCurve,
  kMissingRequiredAttack,
  kBudgetExceedsPolicy,
  kIncompletePayload,
  kConcurrentWriter,
  kNoSecureVersion,
  kGoldenTooSmall,
  kWindowTooSmall,
  kDuplicateCell,
  kMissingCell,
  kUnknownId,
  kIo,
  kFormat,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a machine-readable kind so the
// CLI can map it onto an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidConfig: return "invalid-config";
    case ErrorKind::kDegenerateBox: return "degenerate-box";
    case ErrorKind::kShapeMismatch: return "shape-mismatch";
    case ErrorKind::kNonFiniteInput: return "non-finite-input";
    case ErrorKind::kLossNotScalar: return "loss-not-scalar";
    case ErrorKind::kMissingGradient: return "missing-gradient";
    case ErrorKind::kCenterOutsideGrid: return "center-outside-grid";
    case ErrorKind::kEmptySplit: return "empty-split";
    case ErrorKind::kDiverged: return "diverged";
    case ErrorKind::kAlphaOutOfRange: return "alpha-out-of-range";
    case ErrorKind::kNonFiniteGradient: return "non-finite-gradient";
    case ErrorKind::kNoPositiveCell: return "no-positive-cell";
    case ErrorKind::kZeroGradient: return "zero-gradient";
    case ErrorKind::kBatchTooSmall: return "batch-too-small";
    case ErrorKind::kNoGroundTruth: return "no-ground-truth";
    case ErrorKind::kInvalidCurve: return "invalid-curve";
    case ErrorKind::kMissingRequiredAttack: return "missing-required-attack";
    case ErrorKind::kBudgetExceedsPolicy: return "budget-exceeds-policy";
    case ErrorKind::kIncompletePayload: return "incomplete-payload";
    case ErrorKind::kConcurrentWriter: return "concurrent-writer";
    case ErrorKind::kNoSecureVersion: return "no-secure-version";
    case ErrorKind::kGoldenTooSmall: return "golden-too-small";
    case ErrorKind::kWindowTooSmall: return "window-too-small";
    case ErrorKind::kDuplicateCell: return "duplicate-cell";
    case ErrorKind::kMissingCell: return "missing-cell";
    case ErrorKind::kUnknownId: return "unknown-id";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
  }
  return "unknown";
}

}  // namespace secmlops
