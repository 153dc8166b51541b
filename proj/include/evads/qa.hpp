#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace evads::qa {

enum class TaskKind { kBP, kCM, kML, kCI, kRC };
enum class Dimension { kPerception, kCognitionReasoning };
enum class Modality { kV, kA, kO };

inline constexpr TaskKind kAllTasks[] = {TaskKind::kBP, TaskKind::kCM, TaskKind::kML, TaskKind::kCI, TaskKind::kRC};

std::string_view to_string(TaskKind task);
TaskKind parse_task(std::string_view s);
std::string_view task_title(TaskKind task);
Dimension dimension_of(TaskKind task);

char to_char(Modality m);
Modality parse_modality(std::string_view s);

/// Reasoning personas (Consumer..CreativeDirector) serve ML/CI/RC; the five
/// perception perspectives serve BP/CM.
enum class PersonaKind {
  kConsumer,
  kPragmatist,
  kSkeptic,
  kExpert,
  kCreativeDirector,
  kPhysicalAttributes,
  kSymbolicInformation,
  kRelationalEvidence,
  kEnvironmentalContext,
  kActionableBehaviors,
};

struct LevelRange {
  int lo = 1;
  int hi = 5;
  friend bool operator==(const LevelRange&, const LevelRange&) = default;
};

struct Persona {
  PersonaKind kind = PersonaKind::kConsumer;
  LevelRange levels;

  /// Persona with its full declared band.
  static Persona make(PersonaKind kind);
  /// Throws Error(kValidation) when `levels` leaves the declared band.
  void validate() const;
  std::string slug() const;
  Dimension dimension() const;
};

LevelRange declared_band(PersonaKind kind);
std::string_view slug(PersonaKind kind);
PersonaKind parse_persona(std::string_view slug);
/// Personas applicable to a task's dimension, in declaration order.
std::vector<Persona> personas_for(TaskKind task);

struct EvidenceItem {
  Modality modality = Modality::kV;
  int t0 = 0;
  int t1 = 1;
  std::string excerpt;
  friend bool operator==(const EvidenceItem&, const EvidenceItem&) = default;
};

struct EvidenceChain {
  std::vector<EvidenceItem> items;
  bool empty() const { return items.empty(); }
  friend bool operator==(const EvidenceChain&, const EvidenceChain&) = default;
};

enum class QaStatus { kPending, kAccepted, kRejected, kManualCorrection };
std::string_view to_string(QaStatus status);
QaStatus parse_status(std::string_view s);

inline constexpr int kMaxCycle = 3;

struct Provenance {
  std::string persona;
  std::string persona_backend;
  std::string judge_backend;
  std::vector<std::string> contributors;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct QaItem {
  std::string qa_id;
  std::string video_id;
  TaskKind task = TaskKind::kBP;
  int difficulty = 1;  // L1..L5
  std::string question;
  std::string answer;
  std::string reasoning;
  EvidenceChain evidence;
  /// CM information gap: the modality that raises the question and the one
  /// that settles it.
  std::optional<Modality> question_source;
  std::optional<Modality> decisive_modality;
  QaStatus status = QaStatus::kPending;
  int cycle = 0;
  Provenance provenance;
  /// Constraint violations from the latest automated check.
  std::vector<std::string> flags;

  friend bool operator==(const QaItem&, const QaItem&) = default;
};

/// Result of a review decision applied to an item.
enum class ReviewOutcome { kAccepted, kPendingRegeneration, kManualCorrection };
std::string_view to_string(ReviewOutcome outcome);

/// Applies the status machine: pending -> accepted on accept; on reject,
/// cycle < 3 -> rejected (awaiting regeneration), cycle == 3 -> manual_correction.
/// Throws Error(kState) unless the item is pending.
ReviewOutcome apply_verdict(QaItem& item, bool accept);

/// Throws Error(kState) unless the item is rejected and below the cycle limit,
/// i.e. allowed to be regenerated as cycle + 1.
void check_regenerable(const QaItem& item);

nlohmann::json to_json(const QaItem& item);
QaItem qa_from_json(const nlohmann::json& j);
nlohmann::json evidence_to_json(const EvidenceChain& chain);
EvidenceChain evidence_from_json(const nlohmann::json& j);

std::vector<QaItem> read_qa_items(const std::filesystem::path& path);
void write_qa_items(const std::filesystem::path& path, const std::vector<QaItem>& items);
std::string qa_items_to_jsonl(const std::vector<QaItem>& items);

/// `A [2–3): waterproof` per line.
std::string render_evidence(const EvidenceChain& chain);

}  // namespace evads::qa
