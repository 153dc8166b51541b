#include "evads/annotator.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "evads/error.hpp"
#include "evads/parallel.hpp"
#include "evads/text.hpp"

namespace evads::annotator {

using json = nlohmann::json;
using qa::Modality;

PromptLibrary::PromptLibrary(std::filesystem::path root) : root_(std::move(root)) {}

const std::string& PromptLibrary::load(const std::filesystem::path& relative) const {
  std::lock_guard lock(mu_);
  auto it = cache_.find(relative);
  if (it != cache_.end()) return it->second;
  const auto path = root_ / relative;
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "prompt template not found: " + path.string(), {path.string()});
  std::stringstream ss;
  ss << in.rdbuf();
  return cache_.emplace(relative, ss.str()).first->second;
}

const std::string& PromptLibrary::persona_prompt(TaskKind task, const Persona& persona) const {
  return load(std::filesystem::path(std::string(qa::to_string(task))) / (persona.slug() + ".txt"));
}

const std::string& PromptLibrary::judge_prompt(TaskKind task) const {
  return load(std::filesystem::path(std::string(qa::to_string(task))) / "judge.txt");
}

const std::string& PromptLibrary::shared(const std::string& name) const {
  return load(std::filesystem::path("_shared") / (name + ".txt"));
}

namespace {

bool starts_with_ci(const std::string& s, const std::string& prefix) {
  return s.size() >= prefix.size() && text::to_lower_ascii(s.substr(0, prefix.size())) == text::to_lower_ascii(prefix);
}

// Removes "(hint: ...)" groups and a trailing "hint: ..." clause.
std::string strip_hints(std::string s) {
  for (;;) {
    const std::string lower = text::to_lower_ascii(s);
    const auto open = lower.find("(hint");
    if (open == std::string::npos) break;
    const auto close = s.find(')', open);
    s.erase(open, close == std::string::npos ? std::string::npos : close - open + 1);
  }
  const std::string lower = text::to_lower_ascii(s);
  for (const char* marker : {" hint:", "hint:"}) {
    const auto pos = lower.find(marker);
    if (pos != std::string::npos && pos > 0) {
      s.erase(pos);
      break;
    }
  }
  return s;
}

bool is_terminal_punct(char32_t cp) {
  return cp == '?' || cp == '.' || cp == '!' || cp == ',' || cp == ';' || cp == ':' || cp == 0x3002 ||
         cp == 0xFF1F || cp == 0xFF01 || cp == 0xFF0C || cp == 0xFF1B || cp == 0xFF1A || text::is_space(cp);
}

std::string strip_word_punct(const std::string& word) {
  auto cps = text::decode_utf8(word);
  while (!cps.empty() && text::is_punctuation(cps.back())) cps.pop_back();
  std::size_t b = 0;
  while (b < cps.size() && text::is_punctuation(cps[b])) ++b;
  return text::to_lower_ascii(text::encode_utf8({cps.begin() + static_cast<std::ptrdiff_t>(b), cps.end()}));
}

std::string modality_str(Modality m) { return std::string(1, qa::to_char(m)); }

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += sep;
    out += p;
  }
  return out;
}

// Reads the content fields shared by candidates and judged items.
void read_item_fields(const json& j, QaItem& item, int default_difficulty) {
  if (!j.is_object()) throw std::invalid_argument("item is not an object");
  item.question = j.at("question").get<std::string>();
  item.answer = j.at("answer").get<std::string>();
  item.reasoning = j.value("reasoning", std::string{});
  if (text::trim(item.question).empty() || text::trim(item.answer).empty()) {
    throw std::invalid_argument("question and answer must be non-empty");
  }
  json tmp = {{"task", "BP"}, {"question", ""}, {"answer", ""}, {"difficulty", j.value("difficulty", json(default_difficulty))}};
  item.difficulty = qa::qa_from_json(tmp).difficulty;
  item.evidence = qa::evidence_from_json(j.value("evidence", json::array()));
  auto modality = [&](const char* key) -> std::optional<Modality> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return qa::parse_modality(it->get<std::string>());
  };
  item.question_source = modality("question_source");
  item.decisive_modality = modality("decisive_modality");
}

json candidate_prompt_json(const QaItem& c) {
  json j = qa::to_json(c);
  for (const char* k : {"status", "cycle", "flags", "qa_id", "video_id"}) j.erase(k);
  return j;
}

std::map<std::string, std::string> context_vars(const aligner::StructuredContext& context, TaskKind task,
                                                const RoundContext& round) {
  std::string feedback = "none";
  if (!round.feedback.empty()) {
    feedback.clear();
    for (const auto& f : round.feedback) feedback += "- " + f + "\n";
  }
  return {{"context", aligner::render_context(context)},
          {"metadata", aligner::render_metadata(context)},
          {"video_id", context.video_id},
          {"task", std::string(qa::to_string(task))},
          {"task_name", std::string(qa::task_title(task))},
          {"cycle", std::to_string(round.cycle)},
          {"feedback", feedback}};
}

}  // namespace

NormalizedQuestion normalize_question(const std::string& question, const QuestionPolicy& policy) {
  std::string s = text::collapse_whitespace(strip_hints(question));
  bool stripped = true;
  while (stripped) {
    stripped = false;
    for (const auto& phrase : policy.leading_phrases) {
      if (starts_with_ci(s, phrase)) {
        s = text::trim(s.substr(phrase.size()));
        stripped = true;
      }
    }
  }
  auto cps = text::decode_utf8(s);
  while (!cps.empty() && is_terminal_punct(cps.back())) cps.pop_back();
  std::size_t lead = 0;
  while (lead < cps.size() && (text::is_space(cps[lead]) || cps[lead] == ',' || cps[lead] == 0xFF0C)) ++lead;
  cps.erase(cps.begin(), cps.begin() + static_cast<std::ptrdiff_t>(lead));
  if (cps.empty()) throw Error(ErrorKind::kNormalization, "question is empty after normalization");
  if (cps.front() >= 'a' && cps.front() <= 'z') cps.front() = cps.front() - 'a' + 'A';

  NormalizedQuestion out;
  out.text = text::encode_utf8(cps) + "?";
  out.words = text::word_count(out.text);
  out.over_cap = out.words > policy.max_words;
  for (const auto& word : text::split_whitespace(out.text)) {
    const std::string w = strip_word_punct(word);
    for (const auto& term : policy.descriptive_terms) {
      if (w == text::to_lower_ascii(term) &&
          std::find(out.descriptive_hits.begin(), out.descriptive_hits.end(), w) == out.descriptive_hits.end()) {
        out.descriptive_hits.push_back(w);
      }
    }
  }
  return out;
}

CheckResult check_traceability(const QaItem& item, const aligner::StructuredContext& context) {
  CheckResult r;
  if (item.evidence.empty()) {
    r.pass = false;
    r.reasons.push_back("empty evidence");
    return r;
  }
  const int end = context.end_second();
  for (const auto& e : item.evidence.items) {
    const std::string where = modality_str(e.modality) + " [" + std::to_string(e.t0) + "," + std::to_string(e.t1) + ")";
    if (e.t0 < 0 || e.t1 <= e.t0 || e.t1 > end) {
      r.pass = false;
      r.reasons.push_back("span out of range: " + where);
      continue;
    }
    if (e.modality == Modality::kV) continue;
    const std::string channel = aligner::channel_text(context, qa::to_char(e.modality), e.t0, e.t1);
    if (e.excerpt.empty() || channel.find(e.excerpt) == std::string::npos) {
      r.pass = false;
      r.reasons.push_back("excerpt not found: " + where + " \"" + e.excerpt + "\"");
    }
  }
  return r;
}

CheckResult check_cross_modal_gap(const QaItem& item) {
  if (item.task != TaskKind::kCM) {
    throw Error(ErrorKind::kNotApplicable,
                "cross-modal gap applies to CM items only, got " + std::string(qa::to_string(item.task)));
  }
  CheckResult r;
  std::set<Modality> modalities;
  for (const auto& e : item.evidence.items) modalities.insert(e.modality);
  if (modalities.size() < 2) {
    r.pass = false;
    r.reasons.push_back("single modality");
  }
  if (!item.question_source || !item.decisive_modality) {
    r.pass = false;
    r.reasons.push_back("question source or decisive modality undeclared");
  } else if (*item.question_source == *item.decisive_modality) {
    r.pass = false;
    r.reasons.push_back("question source equals decisive modality");
  }
  return r;
}

std::vector<QaItem> generate_candidates(const aligner::StructuredContext& context, TaskKind task,
                                        const Persona& persona, const BoundBackend& backend,
                                        const AnnotatorConfig& config, const RoundContext& round) {
  persona.validate();
  if (persona.dimension() != qa::dimension_of(task)) {
    throw Error(ErrorKind::kPersonaMismatch,
                "persona " + persona.slug() + " does not serve task " + std::string(qa::to_string(task)));
  }
  const PromptLibrary library(config.prompt_root);
  auto vars = context_vars(context, task, round);
  vars["persona"] = persona.slug();
  vars["levels"] = "L" + std::to_string(persona.levels.lo) + "-L" + std::to_string(persona.levels.hi);
  vars["num_candidates"] = std::to_string(config.candidates_per_persona);
  vars["schema"] = library.shared("candidate_schema");

  backend::ChatRequest request;
  request.system = library.shared("persona_system");
  request.user = backend::fill_template(library.persona_prompt(task, persona), vars);
  request.temperature = config.persona_temperature;
  request.tags = {{"role", "persona"},
                  {"task", std::string(qa::to_string(task))},
                  {"persona", persona.slug()},
                  {"video_id", context.video_id},
                  {"cycle", std::to_string(round.cycle)}};

  std::function<backend::Parsed<json>(const std::string&)> parse = [](const std::string& raw) {
    backend::Parsed<json> p;
    const auto block = backend::extract_fenced_block(raw);
    if (!block) {
      p.error = "no fenced block";
      return p;
    }
    try {
      json j = json::parse(*block);
      if (j.is_object() && j.contains("candidates")) j = j["candidates"];
      if (!j.is_array()) {
        p.error = "candidates is not an array";
        return p;
      }
      p.value = std::move(j);
    } catch (const json::parse_error& e) {
      p.error = std::string("invalid JSON: ") + e.what();
    }
    return p;
  };

  std::string last_error;
  const auto parsed =
      backend::complete_with_retries<json>(*backend.client, request, backend.profile.max_retries, parse, &last_error);
  if (!parsed) {
    spdlog::warn("{} {} {}: dropping persona output after {} attempts: {}", context.video_id, qa::to_string(task),
                 persona.slug(), backend.profile.max_retries + 1, last_error);
    return {};
  }

  std::vector<QaItem> out;
  for (std::size_t k = 0; k < parsed->size(); ++k) {
    QaItem c;
    try {
      read_item_fields((*parsed)[k], c, persona.levels.lo);
    } catch (const std::exception& e) {
      spdlog::warn("{} {} {}: skipping malformed candidate {}: {}", context.video_id, qa::to_string(task),
                   persona.slug(), k, e.what());
      continue;
    }
    c.qa_id = context.video_id + ":" + std::string(qa::to_string(task)) + ":" + persona.slug() + ":" + std::to_string(k);
    c.video_id = context.video_id;
    c.task = task;
    c.cycle = round.cycle;
    c.status = qa::QaStatus::kPending;
    c.provenance.persona = persona.slug();
    c.provenance.persona_backend = backend.client->name();
    out.push_back(std::move(c));
  }
  return out;
}

Adjudication adjudicate(const std::vector<QaItem>& candidates, const aligner::StructuredContext& context,
                        TaskKind task, const BoundBackend& backend, const AnnotatorConfig& config,
                        const std::string& qa_id, const RoundContext& round) {
  if (candidates.empty()) throw Error(ErrorKind::kAdjudication, "no candidates to adjudicate");
  const PromptLibrary library(config.prompt_root);
  auto vars = context_vars(context, task, round);
  json cand = json::array();
  for (const auto& c : candidates) cand.push_back(candidate_prompt_json(c));
  vars["candidates"] = cand.dump(2);
  vars["schema"] = library.shared("item_schema");

  backend::ChatRequest request;
  request.system = library.shared("judge_system");
  request.user = backend::fill_template(library.judge_prompt(task), vars);
  request.temperature = config.judge_temperature;
  request.tags = {{"role", "judge"},
                  {"task", std::string(qa::to_string(task))},
                  {"video_id", context.video_id},
                  {"qa_id", qa_id},
                  {"cycle", std::to_string(round.cycle)}};

  std::function<backend::Parsed<QaItem>(const std::string&)> parse = [](const std::string& raw) {
    backend::Parsed<QaItem> p;
    const auto block = backend::extract_fenced_block(raw);
    if (!block) {
      p.error = "no fenced block";
      return p;
    }
    try {
      json j = json::parse(*block);
      if (j.is_object() && j.contains("item")) j = j["item"];
      QaItem item;
      read_item_fields(j, item, 1);
      p.value = std::move(item);
    } catch (const std::exception& e) {
      p.error = e.what();
    }
    return p;
  };

  std::string last_error;
  auto judged =
      backend::complete_with_retries<QaItem>(*backend.client, request, backend.profile.max_retries, parse, &last_error);
  if (!judged) {
    throw Error(ErrorKind::kAdjudication, context.video_id + " " + std::string(qa::to_string(task)) +
                                              ": judge output unparseable: " + last_error);
  }

  Adjudication result;
  QaItem& item = result.item;
  item = std::move(*judged);
  item.qa_id = qa_id;
  item.video_id = context.video_id;
  item.task = task;
  item.cycle = round.cycle;
  item.status = qa::QaStatus::kPending;
  item.provenance.persona = "primary_judge";
  item.provenance.persona_backend = candidates.front().provenance.persona_backend;
  item.provenance.judge_backend = backend.client->name();
  std::set<std::string> contributors;
  for (const auto& c : candidates) contributors.insert(c.provenance.persona);
  item.provenance.contributors.assign(contributors.begin(), contributors.end());

  try {
    const NormalizedQuestion nq = normalize_question(item.question, config.policy);
    item.question = nq.text;
    if (nq.over_cap) {
      result.violations.push_back("question-length: " + std::to_string(nq.words) + " words exceeds " +
                                  std::to_string(config.policy.max_words));
    }
    for (const auto& term : nq.descriptive_hits) result.violations.push_back("descriptive-term: " + term);
  } catch (const Error& e) {
    result.violations.push_back(std::string("normalization: ") + e.what());
  }
  for (const auto& reason : check_traceability(item, context).reasons) {
    result.violations.push_back("traceability: " + reason);
  }
  if (task == TaskKind::kCM) {
    for (const auto& reason : check_cross_modal_gap(item).reasons) {
      result.violations.push_back("cross-modal-gap: " + reason);
    }
  }
  result.accepted = result.violations.empty();
  item.flags = result.violations;
  return result;
}

std::string make_qa_id(const std::string& video_id, TaskKind task) {
  return video_id + ":" + std::string(qa::to_string(task));
}

namespace {

QaItem annotate_task_with_id(const aligner::StructuredContext& context, TaskKind task,
                             const AnnotationBackends& backends, const AnnotatorConfig& config,
                             const std::string& qa_id, int start_cycle, std::vector<std::string> feedback) {
  if (start_cycle < 0 || start_cycle > qa::kMaxCycle) {
    throw Error(ErrorKind::kState, qa_id + ": cycle " + std::to_string(start_cycle) + " is past the regeneration limit");
  }
  std::optional<QaItem> last;
  for (int cycle = start_cycle; cycle <= qa::kMaxCycle; ++cycle) {
    const RoundContext round{cycle, feedback};
    std::vector<QaItem> candidates;
    for (const auto& persona : qa::personas_for(task)) {
      auto batch = generate_candidates(context, task, persona, backends.persona, config, round);
      candidates.insert(candidates.end(), std::make_move_iterator(batch.begin()), std::make_move_iterator(batch.end()));
    }
    if (candidates.empty()) {
      feedback = {"no usable candidates"};
      continue;
    }
    Adjudication adj = adjudicate(candidates, context, task, backends.judge, config, qa_id, round);
    if (adj.accepted) return std::move(adj.item);
    spdlog::info("{} cycle {} failed constraints: {}", qa_id, cycle, join(adj.violations, "; "));
    feedback = adj.violations;
    last = std::move(adj.item);
  }
  QaItem item;
  if (last) {
    item = std::move(*last);
  } else {
    item.qa_id = qa_id;
    item.video_id = context.video_id;
    item.task = task;
  }
  item.cycle = qa::kMaxCycle;
  item.status = qa::QaStatus::kManualCorrection;
  item.flags = feedback;
  return item;
}

}  // namespace

QaItem annotate_task(const aligner::StructuredContext& context, TaskKind task, const AnnotationBackends& backends,
                     const AnnotatorConfig& config, int start_cycle, std::vector<std::string> feedback) {
  return annotate_task_with_id(context, task, backends, config, make_qa_id(context.video_id, task), start_cycle,
                               std::move(feedback));
}

AnnotationRun run_annotation_cycle(const VideoRecord& record, const aligner::StructuredContext& context,
                                   const std::vector<TaskKind>& tasks, const AnnotationBackends& backends,
                                   const AnnotatorConfig& config) {
  if (record.video_id != context.video_id) {
    throw Error(ErrorKind::kValidation, "context " + context.video_id + " does not belong to " + record.video_id);
  }
  AnnotationRun run;
  for (TaskKind task : tasks) {
    try {
      run.items.push_back(annotate_task(context, task, backends, config));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kBackend && e.kind() != ErrorKind::kAdjudication) throw;
      spdlog::error("{} {}: task aborted: {}", record.video_id, qa::to_string(task), e.what());
      run.failures.push_back({record.video_id, task, e.what()});
    }
  }
  return run;
}

QaItem regenerate_item(const QaItem& rejected, const aligner::StructuredContext& context,
                       const AnnotationBackends& backends, const AnnotatorConfig& config,
                       const std::vector<std::string>& reviewer_feedback) {
  qa::check_regenerable(rejected);
  if (rejected.video_id != context.video_id) {
    throw Error(ErrorKind::kValidation, "context " + context.video_id + " does not belong to " + rejected.qa_id);
  }
  std::vector<std::string> feedback = reviewer_feedback;
  if (feedback.empty()) feedback.push_back("rejected in review");
  return annotate_task_with_id(context, rejected.task, backends, config, rejected.qa_id, rejected.cycle + 1,
                               std::move(feedback));
}

AnnotationRun annotate_corpus(const std::vector<std::pair<VideoRecord, aligner::StructuredContext>>& videos,
                              const std::vector<TaskKind>& tasks, const AnnotationBackends& backends,
                              const AnnotatorConfig& config, unsigned workers) {
  std::vector<AnnotationRun> runs(videos.size());
  parallel_for(videos.size(), workers, [&](std::size_t k) {
    runs[k] = run_annotation_cycle(videos[k].first, videos[k].second, tasks, backends, config);
  });
  AnnotationRun all;
  for (auto& r : runs) {
    all.items.insert(all.items.end(), r.items.begin(), r.items.end());
    all.failures.insert(all.failures.end(), r.failures.begin(), r.failures.end());
  }
  return all;
}

}  // namespace evads::annotator
