#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace otter {

enum class Errc {
  ModalityConflict,
  KindViolation,
  SchemaParse,
  SchemaValidation,
  SourceRead,
  RowDecode,
  NTriplesParse,
  MissingHandler,
  NonFinite,
  DimMismatch,
  ParseError,
  ShapeMismatch,
  MissingProjection,
  MissingRelationWeight,
  UnknownRelation,
  ExhaustedCandidates,
  InvalidK,
  EmptyTrainingSet,
  InfeasibleSplit,
  EmptyTrain,
  ZeroVariance,
  EmptyEnsemble,
  CheckpointFormat,
  MissingHistory,
  InvalidConfig,
};

constexpr std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::ModalityConflict: return "ModalityConflict";
    case Errc::KindViolation: return "KindViolation";
    case Errc::SchemaParse: return "SchemaParse";
    case Errc::SchemaValidation: return "SchemaValidation";
    case Errc::SourceRead: return "SourceRead";
    case Errc::RowDecode: return "RowDecode";
    case Errc::NTriplesParse: return "NTriplesParse";
    case Errc::MissingHandler: return "MissingHandler";
    case Errc::NonFinite: return "NonFinite";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::ParseError: return "ParseError";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::MissingProjection: return "MissingProjection";
    case Errc::MissingRelationWeight: return "MissingRelationWeight";
    case Errc::UnknownRelation: return "UnknownRelation";
    case Errc::ExhaustedCandidates: return "ExhaustedCandidates";
    case Errc::InvalidK: return "InvalidK";
    case Errc::EmptyTrainingSet: return "EmptyTrainingSet";
    case Errc::InfeasibleSplit: return "InfeasibleSplit";
    case Errc::EmptyTrain: return "EmptyTrain";
    case Errc::ZeroVariance: return "ZeroVariance";
    case Errc::EmptyEnsemble: return "EmptyEnsemble";
    case Errc::CheckpointFormat: return "CheckpointFormat";
    case Errc::MissingHistory: return "MissingHistory";
    case Errc::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the Errc codes so that
/// callers (notably the CLI) can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace otter
