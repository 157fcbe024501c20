#pragma once

#include <stdexcept>
#include <string>

namespace afdetect {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ingest / digitizer
struct MalformedFile : Error { using Error::Error; };
struct EmptySignal : Error { using Error::Error; };
struct NoSignalPixels : Error { using Error::Error; };
struct DegenerateRange : Error { using Error::Error; };
struct InsufficientData : Error { using Error::Error; };

// preprocess
struct InvalidCutoff : Error { using Error::Error; };
struct TooShort : Error { using Error::Error; };

// cwt
struct NonPositiveScale : Error { using Error::Error; };

// autodiff
struct ShapeMismatch : Error { using Error::Error; };
struct NotScalar : Error { using Error::Error; };
struct GraphConsumed : Error { using Error::Error; };

// models / sampler
struct MembershipMismatch : Error { using Error::Error; };
struct EmptyBranches : Error { using Error::Error; };
struct TooFewNegatives : Error { using Error::Error; };
struct NoPositives : Error { using Error::Error; };

// eval
struct SingleClassInput : Error { using Error::Error; };

// cli
struct ConfigError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct ArchitectureMismatch : Error { using Error::Error; };

}  // namespace afdetect
