#include "evads/qa.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evads/error.hpp"
#include "evads/text.hpp"

namespace evads::qa {

using json = nlohmann::json;

std::string_view to_string(TaskKind task) {
  switch (task) {
    case TaskKind::kBP: return "BP";
    case TaskKind::kCM: return "CM";
    case TaskKind::kML: return "ML";
    case TaskKind::kCI: return "CI";
    case TaskKind::kRC: return "RC";
  }
  return "?";
}

TaskKind parse_task(std::string_view s) {
  for (TaskKind t : kAllTasks) {
    if (to_string(t) == s) return t;
  }
  throw Error(ErrorKind::kValidation, "unknown task '" + std::string(s) + "' (expected BP, CM, ML, CI, RC)");
}

std::string_view task_title(TaskKind task) {
  switch (task) {
    case TaskKind::kBP: return "Basic Perception";
    case TaskKind::kCM: return "Cross-Modal Detection";
    case TaskKind::kML: return "Marketing Logic";
    case TaskKind::kCI: return "Consumer Insight";
    case TaskKind::kRC: return "Regulatory Compliance";
  }
  return "?";
}

Dimension dimension_of(TaskKind task) {
  return task == TaskKind::kBP || task == TaskKind::kCM ? Dimension::kPerception : Dimension::kCognitionReasoning;
}

char to_char(Modality m) {
  switch (m) {
    case Modality::kV: return 'V';
    case Modality::kA: return 'A';
    case Modality::kO: return 'O';
  }
  return '?';
}

Modality parse_modality(std::string_view s) {
  if (s == "V") return Modality::kV;
  if (s == "A") return Modality::kA;
  if (s == "O") return Modality::kO;
  throw Error(ErrorKind::kValidation, "unknown modality '" + std::string(s) + "' (expected V, A, O)");
}

LevelRange declared_band(PersonaKind kind) {
  switch (kind) {
    case PersonaKind::kConsumer: return {1, 3};
    case PersonaKind::kPragmatist: return {2, 3};
    case PersonaKind::kSkeptic: return {2, 4};
    case PersonaKind::kExpert: return {3, 5};
    case PersonaKind::kCreativeDirector: return {4, 5};
    default: return {1, 3};
  }
}

std::string_view slug(PersonaKind kind) {
  switch (kind) {
    case PersonaKind::kConsumer: return "consumer";
    case PersonaKind::kPragmatist: return "pragmatist";
    case PersonaKind::kSkeptic: return "skeptic";
    case PersonaKind::kExpert: return "expert";
    case PersonaKind::kCreativeDirector: return "creative_director";
    case PersonaKind::kPhysicalAttributes: return "physical_attributes";
    case PersonaKind::kSymbolicInformation: return "symbolic_information";
    case PersonaKind::kRelationalEvidence: return "relational_evidence";
    case PersonaKind::kEnvironmentalContext: return "environmental_context";
    case PersonaKind::kActionableBehaviors: return "actionable_behaviors";
  }
  return "?";
}

PersonaKind parse_persona(std::string_view s) {
  for (int k = 0; k <= static_cast<int>(PersonaKind::kActionableBehaviors); ++k) {
    const auto kind = static_cast<PersonaKind>(k);
    if (slug(kind) == s) return kind;
  }
  throw Error(ErrorKind::kValidation, "unknown persona '" + std::string(s) + "'");
}

Persona Persona::make(PersonaKind kind) { return {kind, declared_band(kind)}; }

void Persona::validate() const {
  const LevelRange band = declared_band(kind);
  if (levels.lo > levels.hi || levels.lo < band.lo || levels.hi > band.hi) {
    throw Error(ErrorKind::kValidation, "persona " + slug() + " level range L" + std::to_string(levels.lo) + "-L" +
                                            std::to_string(levels.hi) + " outside its band L" +
                                            std::to_string(band.lo) + "-L" + std::to_string(band.hi));
  }
}

std::string Persona::slug() const { return std::string(qa::slug(kind)); }

Dimension Persona::dimension() const {
  return static_cast<int>(kind) <= static_cast<int>(PersonaKind::kCreativeDirector) ? Dimension::kCognitionReasoning
                                                                                     : Dimension::kPerception;
}

std::vector<Persona> personas_for(TaskKind task) {
  std::vector<Persona> out;
  const bool perception = dimension_of(task) == Dimension::kPerception;
  const int first = perception ? static_cast<int>(PersonaKind::kPhysicalAttributes) : 0;
  const int last = perception ? static_cast<int>(PersonaKind::kActionableBehaviors)
                              : static_cast<int>(PersonaKind::kCreativeDirector);
  for (int k = first; k <= last; ++k) out.push_back(Persona::make(static_cast<PersonaKind>(k)));
  return out;
}

std::string_view to_string(QaStatus status) {
  switch (status) {
    case QaStatus::kPending: return "pending";
    case QaStatus::kAccepted: return "accepted";
    case QaStatus::kRejected: return "rejected";
    case QaStatus::kManualCorrection: return "manual_correction";
  }
  return "?";
}

QaStatus parse_status(std::string_view s) {
  if (s == "pending") return QaStatus::kPending;
  if (s == "accepted") return QaStatus::kAccepted;
  if (s == "rejected") return QaStatus::kRejected;
  if (s == "manual_correction") return QaStatus::kManualCorrection;
  throw Error(ErrorKind::kValidation, "unknown status '" + std::string(s) + "'");
}

std::string_view to_string(ReviewOutcome outcome) {
  switch (outcome) {
    case ReviewOutcome::kAccepted: return "accepted";
    case ReviewOutcome::kPendingRegeneration: return "pending_regeneration";
    case ReviewOutcome::kManualCorrection: return "manual_correction";
  }
  return "?";
}

ReviewOutcome apply_verdict(QaItem& item, bool accept) {
  if (item.status != QaStatus::kPending) {
    throw Error(ErrorKind::kState, "item " + item.qa_id + " is " + std::string(to_string(item.status)) + ", not pending");
  }
  if (accept) {
    item.status = QaStatus::kAccepted;
    return ReviewOutcome::kAccepted;
  }
  if (item.cycle >= kMaxCycle) {
    item.status = QaStatus::kManualCorrection;
    return ReviewOutcome::kManualCorrection;
  }
  item.status = QaStatus::kRejected;
  return ReviewOutcome::kPendingRegeneration;
}

void check_regenerable(const QaItem& item) {
  if (item.status != QaStatus::kRejected) {
    throw Error(ErrorKind::kState, "item " + item.qa_id + " is " + std::string(to_string(item.status)) +
                                       "; only rejected items are regenerated");
  }
  if (item.cycle >= kMaxCycle) {
    throw Error(ErrorKind::kState, "item " + item.qa_id + " has used all regeneration attempts");
  }
}

json evidence_to_json(const EvidenceChain& chain) {
  json arr = json::array();
  for (const auto& e : chain.items) {
    arr.push_back({{"modality", std::string(1, to_char(e.modality))}, {"t0", e.t0}, {"t1", e.t1}, {"excerpt", e.excerpt}});
  }
  return arr;
}

EvidenceChain evidence_from_json(const json& j) {
  EvidenceChain chain;
  if (j.is_null()) return chain;
  if (!j.is_array()) throw Error(ErrorKind::kValidation, "evidence must be an array");
  for (const auto& e : j) {
    EvidenceItem item;
    item.modality = parse_modality(e.at("modality").get<std::string>());
    if (e.contains("span")) {
      item.t0 = e["span"].at(0).get<int>();
      item.t1 = e["span"].at(1).get<int>();
    } else {
      item.t0 = e.at("t0").get<int>();
      item.t1 = e.at("t1").get<int>();
    }
    item.excerpt = e.value("excerpt", std::string{});
    chain.items.push_back(std::move(item));
  }
  return chain;
}

json to_json(const QaItem& item) {
  json j;
  j["qa_id"] = item.qa_id;
  j["video_id"] = item.video_id;
  j["task"] = std::string(to_string(item.task));
  j["difficulty"] = "L" + std::to_string(item.difficulty);
  j["question"] = item.question;
  j["answer"] = item.answer;
  j["reasoning"] = item.reasoning;
  j["evidence"] = evidence_to_json(item.evidence);
  j["question_source"] = item.question_source ? json(std::string(1, to_char(*item.question_source))) : json(nullptr);
  j["decisive_modality"] =
      item.decisive_modality ? json(std::string(1, to_char(*item.decisive_modality))) : json(nullptr);
  j["status"] = std::string(to_string(item.status));
  j["cycle"] = item.cycle;
  j["provenance"] = {{"persona", item.provenance.persona},
                     {"persona_backend", item.provenance.persona_backend},
                     {"judge_backend", item.provenance.judge_backend},
                     {"contributors", item.provenance.contributors}};
  j["flags"] = item.flags;
  return j;
}

namespace {

int parse_difficulty(const json& j) {
  int level = 0;
  if (j.is_number_integer()) {
    level = j.get<int>();
  } else if (j.is_string()) {
    std::string s = j.get<std::string>();
    if (!s.empty() && (s[0] == 'L' || s[0] == 'l')) s.erase(0, 1);
    try {
      std::size_t used = 0;
      level = std::stoi(s, &used);
      if (used != s.size()) level = 0;
    } catch (const std::exception&) {
      level = 0;
    }
  }
  if (level < 1 || level > 5) throw Error(ErrorKind::kValidation, "difficulty must be L1..L5, got " + j.dump());
  return level;
}

std::optional<Modality> optional_modality(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return parse_modality(it->get<std::string>());
}

}  // namespace

QaItem qa_from_json(const json& j) {
  try {
    QaItem item;
    item.qa_id = j.value("qa_id", std::string{});
    item.video_id = j.value("video_id", std::string{});
    item.task = parse_task(j.at("task").get<std::string>());
    item.difficulty = parse_difficulty(j.at("difficulty"));
    item.question = j.at("question").get<std::string>();
    item.answer = j.at("answer").get<std::string>();
    item.reasoning = j.value("reasoning", std::string{});
    item.evidence = evidence_from_json(j.value("evidence", json::array()));
    item.question_source = optional_modality(j, "question_source");
    item.decisive_modality = optional_modality(j, "decisive_modality");
    item.status = parse_status(j.value("status", std::string("pending")));
    item.cycle = j.value("cycle", 0);
    if (item.cycle < 0 || item.cycle > kMaxCycle) throw Error(ErrorKind::kValidation, "cycle must be 0..3");
    if (j.contains("provenance")) {
      const auto& p = j["provenance"];
      item.provenance.persona = p.value("persona", std::string{});
      item.provenance.persona_backend = p.value("persona_backend", std::string{});
      item.provenance.judge_backend = p.value("judge_backend", std::string{});
      item.provenance.contributors = p.value("contributors", std::vector<std::string>{});
    }
    item.flags = j.value("flags", std::vector<std::string>{});
    return item;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, std::string("malformed QA item: ") + e.what());
  }
}

std::string qa_items_to_jsonl(const std::vector<QaItem>& items) {
  std::string out;
  for (const auto& item : items) out += to_json(item).dump() + "\n";
  return out;
}

std::vector<QaItem> read_qa_items(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kArtifactMissing, "cannot open " + path.string(), {path.string()});
  std::vector<QaItem> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      items.push_back(qa_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw ParseError(e.what(), line_no, path.string());
    } catch (const Error& e) {
      throw ParseError(e.what(), line_no, path.string());
    }
  }
  return items;
}

void write_qa_items(const std::filesystem::path& path, const std::vector<QaItem>& items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kStorage, "cannot write " + path.string());
  out << qa_items_to_jsonl(items);
  if (!out) throw Error(ErrorKind::kStorage, "write failed for " + path.string());
}

std::string render_evidence(const EvidenceChain& chain) {
  std::string out;
  for (const auto& e : chain.items) {
    out += std::string(1, to_char(e.modality)) + " [" + std::to_string(e.t0) + "–" + std::to_string(e.t1) + ")";
    if (!e.excerpt.empty()) out += ": " + e.excerpt;
    out += "\n";
  }
  return out;
}

}  // namespace evads::qa
