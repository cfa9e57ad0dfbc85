#pragma once

#include <stdexcept>
#include <string>

namespace pipefold {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };
struct ValueError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct LengthError : Error { using Error::Error; };
struct VocabError : Error { using Error::Error; };
struct DegenerateVectorError : Error { using Error::Error; };
struct EmptyBatchError : Error { using Error::Error; };
struct OptimError : Error { using Error::Error; };
struct TrainingError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct InterfaceError : Error { using Error::Error; };
struct ConstructionError : Error { using Error::Error; };
struct AlphabetError : Error { using Error::Error; };
struct ExhaustionError : Error { using Error::Error; };
struct PipelineError : Error { using Error::Error; };
struct AssemblyError : Error { using Error::Error; };
struct InputError : Error { using Error::Error; };
struct UndefinedMetricError : Error { using Error::Error; };
struct ResolutionError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

// Checkpoint loading failures, one type per failure mode so callers can
// distinguish a corrupt file from a wrong-role one.
struct FormatError : Error { using Error::Error; };
struct BadMagicError : FormatError { using FormatError::FormatError; };
struct BadVersionError : FormatError { using FormatError::FormatError; };
struct RoleError : FormatError { using FormatError::FormatError; };
struct DigestError : FormatError { using FormatError::FormatError; };

}  // namespace pipefold
