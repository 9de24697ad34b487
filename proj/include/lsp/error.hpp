#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lsp {

enum class ErrorKind {
  kShapeMismatch,
  kUnknownAttribute,
  kNotScalar,
  kDetachedOutput,
  kNonFiniteEvaluation,
  kBadMagic,
  kCountMismatch,
  kTruncatedFile,
  kUnknownLabel,
  kEmptyDataset,
  kDivergedTraining,
  kInvalidClass,
  kScopeMismatch,
  kEmptySubset,
  kStartBelowThreshold,
  kNoCrossingWithinBound,
  kTooManyPoints,
  kBadPerplexity,
  kDegenerateCovariance,
  kIoFailure,
  kConfig,
  kGradientCheckFailed,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace lsp
