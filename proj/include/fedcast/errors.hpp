#pragma once

#include <stdexcept>
#include <string>

namespace fedcast {

enum class Err {
  // dataset
  MalformedHeader,
  DuplicateReading,
  WeatherCoverageGap,
  EmptyHousehold,
  SeriesTooShort,
  BadFractions,
  EmptyTrainingSet,
  BadDimensions,
  // model
  NonFiniteInput,
  LayoutMismatch,
  EmptyBatch,
  // federation
  EmptyRound,
  EmptyDataset,
  ClientFailure,
  BadConfig,
  // privacy
  MissingPairSeed,
  ParticipantMissing,
  // metrics
  AllPointsExcluded,
  ZeroMeanTarget,
  SchemaMismatch,
  // clustering
  TooFewClients,
  EmptyCluster,
  // wire protocol
  BadMagic,
  CrcMismatch,
  Truncated,
  UnknownType,
  ConnectionLost,
  // io
  IoError,
};

const char* err_name(Err code);

/// All recoverable failures are reported as FedError carrying a stable code.
class FedError : public std::runtime_error {
 public:
  FedError(Err code, const std::string& message)
      : std::runtime_error(std::string(err_name(code)) + ": " + message), code_(code) {}

  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& message) {
  throw FedError(code, message);
}

}  // namespace fedcast
