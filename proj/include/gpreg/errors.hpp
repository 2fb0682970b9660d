#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gpreg {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The three groups map to process exit codes: bad config/expression -> 2,
// bad or degenerate data -> 3, numeric failure -> 4.
struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};

struct SyntaxError : ConfigError {
  SyntaxError(const std::string& what, std::size_t pos)
      : ConfigError(what + " (at position " + std::to_string(pos) + ")"),
        position(pos) {}
  std::size_t position;
};

struct UnknownKernel : ConfigError {
  using ConfigError::ConfigError;
};
struct UnknownFeature : ConfigError {
  using ConfigError::ConfigError;
};
struct ArityError : ConfigError {
  using ConfigError::ConfigError;
};
struct UnknownParam : ConfigError {
  using ConfigError::ConfigError;
};

struct ParseError : DataError {
  using DataError::DataError;
};
struct EmptyDataset : DataError {
  using DataError::DataError;
};
struct MissingColumn : DataError {
  using DataError::DataError;
};
struct MissingTrackIds : DataError {
  using DataError::DataError;
};
struct TooFewTracks : DataError {
  using DataError::DataError;
};
struct SchemaMismatch : DataError {
  using DataError::DataError;
};
struct DegenerateData : DataError {
  using DataError::DataError;
};
struct DegenerateColumn : DataError {
  using DataError::DataError;
};
struct NonPositiveAfterShift : DataError {
  using DataError::DataError;
};
struct DomainError : DataError {
  using DataError::DataError;
};
struct LeakageError : DataError {
  using DataError::DataError;
};
struct KTooLarge : DataError {
  using DataError::DataError;
};
struct InvalidGrid : DataError {
  using DataError::DataError;
};
struct RankDeficient : DataError {
  using DataError::DataError;
};
struct LengthMismatch : DataError {
  using DataError::DataError;
};

struct NotPositiveDefinite : NumericError {
  using NumericError::NumericError;
};
struct SizeCapExceeded : NumericError {
  using NumericError::NumericError;
};
struct NonFiniteObjective : NumericError {
  using NumericError::NumericError;
};
struct NonFiniteInput : NumericError {
  using NumericError::NumericError;
};
struct NoConvergence : NumericError {
  using NumericError::NumericError;
};
struct EigenFailure : NumericError {
  using NumericError::NumericError;
};
struct AllChunksFailed : NumericError {
  using NumericError::NumericError;
};

// Exit code for main(): 0 ok, 2/3/4 as above, 1 for anything unexpected.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

}  // namespace gpreg
