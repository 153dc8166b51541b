#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace evads {

/// Classifies every failure the toolkit reports. The CLI maps kinds onto exit
/// codes: user/data problems exit 1, environment and backend problems exit 2.
enum class ErrorKind {
  kParse,
  kValidation,
  kDuplicateId,
  kVersion,
  kArtifactMissing,
  kShape,
  kIngest,
  kDomain,
  kIndex,
  kConfig,
  kPlan,
  kEmptyReport,
  kPersonaMismatch,
  kNormalization,
  kNotApplicable,
  kBackend,
  kAdjudication,
  kJudgeParse,
  kReconciliation,
  kGroupSize,
  kGroup,
  kState,
  kConflict,
  kStorage,
};

std::string_view to_string(ErrorKind kind);

/// True for failures caused by the environment (remote services, storage)
/// rather than by the caller's inputs.
bool is_runtime_kind(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message, std::vector<std::string> details = {});

  ErrorKind kind() const noexcept { return kind_; }
  /// Offending ids, reasons, or loci attached to the error (may be empty).
  const std::vector<std::string>& details() const noexcept { return details_; }

 private:
  ErrorKind kind_;
  std::vector<std::string> details_;
};

/// Parse failure with a 1-based line locus (0 when the locus is the whole input).
class ParseError : public Error {
 public:
  ParseError(std::string message, std::size_t line, std::string source = {});

  std::size_t line() const noexcept { return line_; }
  const std::string& source() const noexcept { return source_; }

 private:
  std::size_t line_;
  std::string source_;
};

}  // namespace evads
