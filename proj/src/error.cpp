#include "evads/error.hpp"

#include <utility>

namespace evads {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kDuplicateId: return "duplicate-id";
    case ErrorKind::kVersion: return "version";
    case ErrorKind::kArtifactMissing: return "artifact-missing";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kIngest: return "ingest";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kIndex: return "index";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kPlan: return "plan";
    case ErrorKind::kEmptyReport: return "empty-report";
    case ErrorKind::kPersonaMismatch: return "persona-mismatch";
    case ErrorKind::kNormalization: return "normalization";
    case ErrorKind::kNotApplicable: return "not-applicable";
    case ErrorKind::kBackend: return "backend";
    case ErrorKind::kAdjudication: return "adjudication";
    case ErrorKind::kJudgeParse: return "judge-parse";
    case ErrorKind::kReconciliation: return "reconciliation";
    case ErrorKind::kGroupSize: return "group-size";
    case ErrorKind::kGroup: return "group";
    case ErrorKind::kState: return "state";
    case ErrorKind::kConflict: return "conflict";
    case ErrorKind::kStorage: return "storage";
  }
  return "unknown";
}

bool is_runtime_kind(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kBackend:
    case ErrorKind::kAdjudication:
    case ErrorKind::kJudgeParse:
    case ErrorKind::kGroup:
    case ErrorKind::kStorage:
      return true;
    default:
      return false;
  }
}

Error::Error(ErrorKind kind, std::string message, std::vector<std::string> details)
    : std::runtime_error(std::string(to_string(kind)) + " error: " + message),
      kind_(kind),
      details_(std::move(details)) {}

namespace {

std::string with_locus(const std::string& message, std::size_t line, const std::string& source) {
  std::string out;
  if (!source.empty()) out += source + ":";
  if (line > 0) out += std::to_string(line) + ": ";
  else if (!source.empty()) out += " ";
  return out + message;
}

}  // namespace

ParseError::ParseError(std::string message, std::size_t line, std::string source)
    : Error(ErrorKind::kParse, with_locus(message, line, source)),
      line_(line),
      source_(std::move(source)) {}

}  // namespace evads
