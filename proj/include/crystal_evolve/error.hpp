// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace crystal_evolve {

enum class Errc {
  // cif-io
  MissingTag,
  EmptyAtomLoop,
  UnknownElement,
  MalformedNumber,
  MalformedDocument,
  InvalidStructure,
  FileNotFound,
  LineParseError,
  // crystal-graph
  DegenerateCell,
  OutOfRange,
  EdgelessGraph,
  // surrogate
  InvalidConfig,
  ShapeMismatch,
  EmptyBatch,
  EmptyDataset,
  DegenerateLabels,
  UnfittedScaler,
  TrainingDiverged,
  IoError,
  SchemaVersionMismatch,
  // fitness
  NonFiniteInput,
  // evolution
  PoolTooSmall,
  SingleElementUniverse,
  // atl-loop
  PartialCheckpoint,
  RunFailure,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::MissingTag: return "MissingTag";
    case Errc::EmptyAtomLoop: return "EmptyAtomLoop";
    case Errc::UnknownElement: return "UnknownElement";
    case Errc::MalformedNumber: return "MalformedNumber";
    case Errc::MalformedDocument: return "MalformedDocument";
    case Errc::InvalidStructure: return "InvalidStructure";
    case Errc::FileNotFound: return "FileNotFound";
    case Errc::LineParseError: return "LineParseError";
    case Errc::DegenerateCell: return "DegenerateCell";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::EdgelessGraph: return "EdgelessGraph";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::DegenerateLabels: return "DegenerateLabels";
    case Errc::UnfittedScaler: return "UnfittedScaler";
    case Errc::TrainingDiverged: return "TrainingDiverged";
    case Errc::IoError: return "IoError";
    case Errc::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::PoolTooSmall: return "PoolTooSmall";
    case Errc::SingleElementUniverse: return "SingleElementUniverse";
    case Errc::PartialCheckpoint: return "PartialCheckpoint";
    case Errc::RunFailure: return "RunFailure";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as this exception. `code()` is the
/// structured kind; `what()` is "<Kind>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(errc_name(code)) + ": " + detail),
        code_(code), detail_(detail) {}

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

// Re-raise with extra context prepended, keeping the kind.
[[noreturn]] inline void rethrow_with_context(const Error& e, const std::string& context) {
  throw Error(e.code(), context + ": " + e.detail());
}

}  // namespace crystal_evolve
