#include "fedcast/errors.hpp"

namespace fedcast {

const char* err_name(Err code) {
  switch (code) {
    case Err::MalformedHeader: return "MalformedHeader";
    case Err::DuplicateReading: return "DuplicateReading";
    case Err::WeatherCoverageGap: return "WeatherCoverageGap";
    case Err::EmptyHousehold: return "EmptyHousehold";
    case Err::SeriesTooShort: return "SeriesTooShort";
    case Err::BadFractions: return "BadFractions";
    case Err::EmptyTrainingSet: return "EmptyTrainingSet";
    case Err::BadDimensions: return "BadDimensions";
    case Err::NonFiniteInput: return "NonFiniteInput";
    case Err::LayoutMismatch: return "LayoutMismatch";
    case Err::EmptyBatch: return "EmptyBatch";
    case Err::EmptyRound: return "EmptyRound";
    case Err::EmptyDataset: return "EmptyDataset";
    case Err::ClientFailure: return "ClientFailure";
    case Err::BadConfig: return "BadConfig";
    case Err::MissingPairSeed: return "MissingPairSeed";
    case Err::ParticipantMissing: return "ParticipantMissing";
    case Err::AllPointsExcluded: return "AllPointsExcluded";
    case Err::ZeroMeanTarget: return "ZeroMeanTarget";
    case Err::SchemaMismatch: return "SchemaMismatch";
    case Err::TooFewClients: return "TooFewClients";
    case Err::EmptyCluster: return "EmptyCluster";
    case Err::BadMagic: return "BadMagic";
    case Err::CrcMismatch: return "CrcMismatch";
    case Err::Truncated: return "Truncated";
    case Err::UnknownType: return "UnknownType";
    case Err::ConnectionLost: return "ConnectionLost";
    case Err::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace fedcast
