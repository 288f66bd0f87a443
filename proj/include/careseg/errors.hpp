#pragma once

#include <stdexcept>
#include <string>

namespace careseg {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// volume / file I/O
struct BadMagic : Error { using Error::Error; };
struct TruncatedFile : Error { using Error::Error; };
struct UnknownDtype : Error { using Error::Error; };
struct IoFailure : Error { using Error::Error; };
struct CodeOutOfRange : Error { using Error::Error; };
struct NotProbabilities : Error { using Error::Error; };
struct GeometryMismatch : Error { using Error::Error; };

// hierarchy / loss
struct UnknownCode : Error { using Error::Error; };
struct SchemaMismatch : Error { using Error::Error; };

// net
struct ShapeMismatch : Error { using Error::Error; };
struct OddSpatialDims : Error { using Error::Error; };
struct IndivisibleDims : Error { using Error::Error; };
struct NoRecordedForward : Error { using Error::Error; };
struct ArchitectureMismatch : Error { using Error::Error; };

// augment
struct DegenerateIntensities : Error { using Error::Error; };

// metrics
struct TooFewCases : Error { using Error::Error; };
struct ZeroVariance : Error { using Error::Error; };

// pipeline
struct InvalidSpec : Error { using Error::Error; };
struct EmptyPool : Error { using Error::Error; };
struct MissingCase : Error { using Error::Error; };

}  // namespace careseg
