#include "lsp/error.hpp"

namespace lsp {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kUnknownAttribute: return "UnknownAttribute";
    case ErrorKind::kNotScalar: return "NotScalar";
    case ErrorKind::kDetachedOutput: return "DetachedOutput";
    case ErrorKind::kNonFiniteEvaluation: return "NonFiniteEvaluation";
    case ErrorKind::kBadMagic: return "BadMagic";
    case ErrorKind::kCountMismatch: return "CountMismatch";
    case ErrorKind::kTruncatedFile: return "TruncatedFile";
    case ErrorKind::kUnknownLabel: return "UnknownLabel";
    case ErrorKind::kEmptyDataset: return "EmptyDataset";
    case ErrorKind::kDivergedTraining: return "DivergedTraining";
    case ErrorKind::kInvalidClass: return "InvalidClass";
    case ErrorKind::kScopeMismatch: return "ScopeMismatch";
    case ErrorKind::kEmptySubset: return "EmptySubset";
    case ErrorKind::kStartBelowThreshold: return "StartBelowThreshold";
    case ErrorKind::kNoCrossingWithinBound: return "NoCrossingWithinBound";
    case ErrorKind::kTooManyPoints: return "TooManyPoints";
    case ErrorKind::kBadPerplexity: return "BadPerplexity";
    case ErrorKind::kDegenerateCovariance: return "DegenerateCovariance";
    case ErrorKind::kIoFailure: return "IoFailure";
    case ErrorKind::kConfig: return "ConfigError";
    case ErrorKind::kGradientCheckFailed: return "GradientCheckFailed";
  }
  return "Unknown";
}

}  // namespace lsp
