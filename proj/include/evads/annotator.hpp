#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "evads/aligner.hpp"
#include "evads/backend.hpp"
#include "evads/corpus.hpp"
#include "evads/qa.hpp"

namespace evads::annotator {

using qa::EvidenceChain;
using qa::Persona;
using qa::QaItem;
using qa::TaskKind;

/// Loads prompt templates from `<root>/<task>/<persona>.txt`,
/// `<root>/<task>/judge.txt` and `<root>/_shared/*.txt`.
class PromptLibrary {
 public:
  explicit PromptLibrary(std::filesystem::path root);

  const std::string& persona_prompt(TaskKind task, const Persona& persona) const;
  const std::string& judge_prompt(TaskKind task) const;
  const std::string& shared(const std::string& name) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  const std::string& load(const std::filesystem::path& relative) const;

  std::filesystem::path root_;
  mutable std::mutex mu_;
  mutable std::map<std::filesystem::path, std::string> cache_;
};

struct QuestionPolicy {
  std::size_t max_words = 15;
  std::vector<std::string> leading_phrases = {
      "in this video,", "in the video,", "based on the video,", "according to the video,", "from the video,",
      "in this ad,", "in the ad,", "based on the ad,", "watching the video,", "in this clip,",
      "视频中，", "在视频中，", "根据视频，"};
  /// Descriptive adjectives a question may not contain (matched per word,
  /// case-insensitively, punctuation stripped).
  std::vector<std::string> descriptive_terms = {"beautiful", "amazing", "stunning", "gorgeous", "elegant",
                                                "fancy",     "awesome", "wonderful", "perfect", "luxurious"};
};

struct NormalizedQuestion {
  std::string text;
  std::size_t words = 0;
  bool over_cap = false;
  std::vector<std::string> descriptive_hits;

  bool acceptable() const { return !over_cap && descriptive_hits.empty(); }
};

/// Strips leading framing phrases and hint clauses, collapses whitespace,
/// capitalizes, and ends the question with exactly one '?'. Questions over the
/// word cap are flagged, never truncated. Throws Error(kNormalization) when
/// nothing is left.
NormalizedQuestion normalize_question(const std::string& question, const QuestionPolicy& policy = {});

struct CheckResult {
  bool pass = true;
  std::vector<std::string> reasons;
};

/// Evidence must be non-empty; A/O excerpts must occur in the cited span's
/// channel text; V items must cite an in-range span.
CheckResult check_traceability(const QaItem& item, const aligner::StructuredContext& context);

/// CM only: at least two evidence modalities and a question source that
/// differs from the decisive modality. Throws Error(kNotApplicable) otherwise.
CheckResult check_cross_modal_gap(const QaItem& item);

struct BoundBackend {
  backend::BackendProfile profile;
  std::shared_ptr<backend::ChatBackend> client;
};

struct AnnotationBackends {
  BoundBackend persona;
  BoundBackend judge;
};

struct AnnotatorConfig {
  std::filesystem::path prompt_root = "prompts";
  QuestionPolicy policy;
  int candidates_per_persona = 2;
  double persona_temperature = 0.7;
  double judge_temperature = 0.0;
};

/// Extra context for a regeneration round.
struct RoundContext {
  int cycle = 0;
  std::vector<std::string> feedback;
};

std::vector<QaItem> generate_candidates(const aligner::StructuredContext& context, TaskKind task,
                                        const Persona& persona, const BoundBackend& backend,
                                        const AnnotatorConfig& config, const RoundContext& round = {});

struct Adjudication {
  QaItem item;
  bool accepted = false;
  std::vector<std::string> violations;
};

/// Asks the primary judge to consolidate the candidates into one item, then
/// enforces normalization, traceability and (for CM) the information gap.
/// Throws Error(kAdjudication) when the judge never returns a parseable item.
Adjudication adjudicate(const std::vector<QaItem>& candidates, const aligner::StructuredContext& context,
                        TaskKind task, const BoundBackend& backend, const AnnotatorConfig& config,
                        const std::string& qa_id, const RoundContext& round = {});

std::string make_qa_id(const std::string& video_id, TaskKind task);

/// Runs generate -> adjudicate -> check for one task, starting at `start_cycle`
/// and regenerating on violations until cycle 3; an item still failing at
/// cycle 3 is returned with status manual_correction.
QaItem annotate_task(const aligner::StructuredContext& context, TaskKind task, const AnnotationBackends& backends,
                     const AnnotatorConfig& config, int start_cycle = 0, std::vector<std::string> feedback = {});

struct TaskFailure {
  std::string video_id;
  TaskKind task;
  std::string error;
};

struct AnnotationRun {
  std::vector<QaItem> items;
  std::vector<TaskFailure> failures;
};

/// Annotates every requested task for one video. A backend failure aborts
/// only the affected task.
AnnotationRun run_annotation_cycle(const VideoRecord& record, const aligner::StructuredContext& context,
                                   const std::vector<TaskKind>& tasks, const AnnotationBackends& backends,
                                   const AnnotatorConfig& config);

/// Regenerates an item a reviewer rejected; the result carries cycle + 1.
QaItem regenerate_item(const QaItem& rejected, const aligner::StructuredContext& context,
                       const AnnotationBackends& backends, const AnnotatorConfig& config,
                       const std::vector<std::string>& reviewer_feedback = {});

/// Runs run_annotation_cycle per video with at most `workers` videos in
/// flight; results keep manifest order.
AnnotationRun annotate_corpus(const std::vector<std::pair<VideoRecord, aligner::StructuredContext>>& videos,
                              const std::vector<TaskKind>& tasks, const AnnotationBackends& backends,
                              const AnnotatorConfig& config, unsigned workers);

}  // namespace evads::annotator
