#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evads/backend.hpp"
#include "evads/corpus.hpp"
#include "evads/qa.hpp"

namespace evads::evaluator {

using qa::TaskKind;

inline constexpr double kScoreGrid[] = {0.0, 0.25, 0.5, 0.75, 1.0};

bool on_grid(double x);
/// Throws Error(kDomain) for an off-grid score.
void require_on_grid(double x);
/// "Perfect Match", "Accurate but Generic", "Partially Correct",
/// "Logical Break", "Completely Incorrect".
std::string tier_label(double x);

struct JudgeScore {
  double x = 0.0;
  std::string tier_label;
  std::string raw_reply;
};

struct MetricTriple {
  double s = 0.0;
  double r2 = 0.0;
  double r5 = 0.0;
  friend bool operator==(const MetricTriple&, const MetricTriple&) = default;
};

MetricTriple score_to_metrics(double x);

/// Finds `score: <n>` (or a bare number as the whole reply). Returns nullopt
/// and sets `error` when nothing parses or the number is off the grid.
std::optional<double> parse_score(const std::string& reply, std::string* error = nullptr);

/// The `<answer>` span of a prediction when present, otherwise the whole
/// prediction, trimmed.
std::string answer_span(const std::string& prediction);

enum class JudgeTarget { kAnswer, kTrace };

struct JudgeInput {
  std::string qa_id;
  std::string question;
  std::string ground_truth;
  qa::EvidenceChain evidence;
  std::string prediction;
};

/// A judge backend together with its rubric templates.
struct Judge {
  backend::BackendProfile profile;
  std::shared_ptr<backend::ChatBackend> client;
  std::string answer_template;
  std::string trace_template;

  /// Reads `<prompt_root>/eval/judge_answer.txt` and `judge_trace.txt`.
  static Judge load(backend::BackendProfile profile, std::shared_ptr<backend::ChatBackend> client,
                    const std::filesystem::path& prompt_root);
  const std::string& template_for(JudgeTarget target) const;
  /// Short stable id of a template's text, part of the cache key.
  std::string template_version(JudgeTarget target) const;
};

/// Sends the rubric prompt and parses the score, retrying malformed or
/// off-grid replies up to profile.max_retries times. Throws
/// Error(kJudgeParse) when no attempt parses and Error(kBackend) when the
/// backend never answers.
JudgeScore judge_response(const JudgeInput& input, const Judge& judge, JudgeTarget target = JudgeTarget::kAnswer);

/// Judged scores keyed by (qa_id, prediction hash, template version, backend
/// name). Optionally persisted as JSON lines; safe for concurrent use.
class JudgeCache {
 public:
  JudgeCache() = default;
  explicit JudgeCache(std::filesystem::path path);

  static std::string key(const JudgeInput& input, const Judge& judge, JudgeTarget target);
  std::optional<JudgeScore> get(const std::string& key) const;
  void put(const std::string& key, const JudgeScore& score);
  std::size_t size() const;

 private:
  std::optional<std::filesystem::path> path_;
  mutable std::mutex mu_;
  std::map<std::string, JudgeScore> entries_;
};

enum class Condition { kBase, kBasePlusAsr };
std::string_view to_string(Condition c);
Condition parse_condition(std::string_view s);

struct MetricMeans {
  double s = 0.0;
  double r2 = 0.0;
  double r5 = 0.0;
  std::size_t n = 0;
};

struct ScoredItem {
  std::string qa_id;
  TaskKind task = TaskKind::kBP;
  double x = 0.0;
  MetricTriple metrics;
};

struct ExcludedItem {
  std::string qa_id;
  std::string reason;
};

struct EvalReport {
  Condition condition = Condition::kBase;
  std::map<TaskKind, MetricMeans> per_task;
  /// Micro average over items.
  MetricMeans all;
  /// Mean of the per-task means; n counts tasks.
  MetricMeans macro;
  std::vector<ScoredItem> items;
  std::vector<ExcludedItem> excluded;
  std::size_t n_submitted = 0;
  std::size_t n_judged = 0;
  std::size_t n_excluded = 0;
};

/// Throws Error(kEmptyReport) on empty input.
EvalReport aggregate_report(const std::vector<std::pair<TaskKind, MetricTriple>>& items, Condition condition);
/// Aggregates scored items (sorted by qa_id first) and keeps them in the report.
EvalReport aggregate_scored(std::vector<ScoredItem> items, Condition condition);

struct Prediction {
  std::string qa_id;
  std::string prediction;
};

std::vector<Prediction> read_predictions(const std::filesystem::path& path);

struct EvaluationOptions {
  Condition condition = Condition::kBase;
  unsigned workers = 4;
  JudgeCache* cache = nullptr;
};

/// Judges every prediction against its QA item and aggregates. Predictions
/// naming an unknown qa_id, or QA items whose video is missing from a
/// non-empty manifest, raise Error(kReconciliation). Items whose judge reply
/// never parses are excluded and counted.
EvalReport run_evaluation(const Manifest& manifest, const std::vector<qa::QaItem>& qa_items,
                          const std::vector<Prediction>& predictions, const Judge& judge,
                          const EvaluationOptions& options = {});

nlohmann::json report_to_json(const EvalReport& report);
/// Tab-separated table, rows S/R3/R5/n by columns BP..RC, ALL; 3 decimals.
std::string report_to_tsv(const EvalReport& report);

}  // namespace evads::evaluator
