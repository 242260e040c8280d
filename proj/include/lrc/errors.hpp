#pragma once

#include <stdexcept>
#include <string>

namespace lrc {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// linalg
struct NonSquareError : Error { using Error::Error; };
struct NotSymmetricError : Error { using Error::Error; };
struct NoConvergenceError : Error { using Error::Error; };
struct DimMismatchError : Error { using Error::Error; };

// net
struct UnknownActivationError : Error { using Error::Error; };
struct UnknownLossError : Error { using Error::Error; };
struct StaleTraceError : Error { using Error::Error; };
struct BadLayerIndexError : Error { using Error::Error; };

// lowrank / newton
struct EmptySubsetError : Error { using Error::Error; };
struct ClippedEigenvalueError : Error { using Error::Error; };
struct GradDimMismatchError : Error { using Error::Error; };
struct NoRetainedDirectionsError : Error { using Error::Error; };
struct SingularGramSystemError : Error { using Error::Error; };

// baseline
struct DimensionCapError : Error { using Error::Error; };

// metrics
struct ColumnCountMismatchError : Error { using Error::Error; };
struct NotOrthonormalError : Error { using Error::Error; };
struct TooFewSamplesError : Error { using Error::Error; };

// experiment / cli
struct ConfigError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct UnknownReferenceError : ConfigError { using ConfigError::ConfigError; };

}  // namespace lrc
