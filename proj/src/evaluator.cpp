#include "evads/evaluator.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "evads/error.hpp"
#include "evads/parallel.hpp"
#include "evads/text.hpp"

namespace evads::evaluator {

using json = nlohmann::json;

bool on_grid(double x) {
  return std::find(std::begin(kScoreGrid), std::end(kScoreGrid), x) != std::end(kScoreGrid);
}

void require_on_grid(double x) {
  if (!on_grid(x)) throw Error(ErrorKind::kDomain, fmt::format("score {} is not one of 0, 0.25, 0.5, 0.75, 1", x));
}

std::string tier_label(double x) {
  require_on_grid(x);
  if (x == 1.0) return "Perfect Match";
  if (x == 0.75) return "Accurate but Generic";
  if (x == 0.5) return "Partially Correct";
  if (x == 0.25) return "Logical Break";
  return "Completely Incorrect";
}

MetricTriple score_to_metrics(double x) {
  require_on_grid(x);
  MetricTriple m;
  m.s = x == 1.0 ? 1.0 : 0.0;
  m.r2 = x == 1.0 ? 1.0 : (x == 0.75 || x == 0.5) ? 0.5 : 0.0;
  m.r5 = x;
  return m;
}

std::optional<double> parse_score(const std::string& reply, std::string* error) {
  static const std::regex labeled(R"(score["']?\s*[:=]\s*(-?[0-9]+(?:\.[0-9]+)?))", std::regex::icase);
  static const std::regex bare(R"(-?[0-9]+(?:\.[0-9]+)?)");
  std::smatch m;
  std::string number;
  const std::string trimmed = text::trim(reply);
  if (std::regex_search(reply, m, labeled)) {
    number = m[1].str();
  } else if (std::regex_match(trimmed, bare)) {
    number = trimmed;
  } else {
    if (error) *error = "no score token in reply";
    return std::nullopt;
  }
  const double x = std::stod(number);
  if (!on_grid(x)) {
    if (error) *error = "off-grid score " + number;
    return std::nullopt;
  }
  return x;
}

std::string answer_span(const std::string& prediction) {
  const auto open = prediction.find("<answer>");
  if (open != std::string::npos) {
    const auto begin = open + std::string("<answer>").size();
    const auto close = prediction.find("</answer>", begin);
    return text::trim(prediction.substr(begin, close == std::string::npos ? std::string::npos : close - begin));
  }
  return text::trim(prediction);
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "judge template not found: " + path.string(), {path.string()});
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Judge Judge::load(backend::BackendProfile profile, std::shared_ptr<backend::ChatBackend> client,
                  const std::filesystem::path& prompt_root) {
  Judge j;
  j.profile = std::move(profile);
  j.client = std::move(client);
  j.answer_template = read_file(prompt_root / "eval" / "judge_answer.txt");
  j.trace_template = read_file(prompt_root / "eval" / "judge_trace.txt");
  return j;
}

const std::string& Judge::template_for(JudgeTarget target) const {
  return target == JudgeTarget::kAnswer ? answer_template : trace_template;
}

std::string Judge::template_version(JudgeTarget target) const {
  return text::hex64(text::fnv1a64(template_for(target)));
}

JudgeScore judge_response(const JudgeInput& input, const Judge& judge, JudgeTarget target) {
  if (text::trim(input.prediction).empty()) {
    throw Error(ErrorKind::kValidation, "empty prediction for " + input.qa_id, {input.qa_id});
  }
  if (!judge.client) throw Error(ErrorKind::kConfig, "judge backend is not configured");
  backend::ChatRequest request;
  request.system = "You are a strict grader. Reply with a single line of the form `score: <value>`.";
  const std::string evidence = qa::render_evidence(input.evidence);
  request.user = backend::fill_template(judge.template_for(target),
                                        {{"question", input.question},
                                         {"ground_truth", input.ground_truth},
                                         {"evidence", evidence.empty() ? "(none)" : evidence},
                                         {"prediction", input.prediction}});
  request.temperature = 0.0;
  request.tags = {{"role", "eval"},
                  {"qa_id", input.qa_id},
                  {"target", target == JudgeTarget::kAnswer ? "answer" : "trace"}};

  std::function<backend::Parsed<double>(const std::string&)> parse = [](const std::string& raw) {
    backend::Parsed<double> p;
    p.value = parse_score(raw, &p.error);
    return p;
  };
  std::string last_error;
  std::string last_raw;
  const auto x = backend::complete_with_retries<double>(*judge.client, request, judge.profile.max_retries, parse,
                                                        &last_error, &last_raw);
  if (!x) {
    throw Error(ErrorKind::kJudgeParse, input.qa_id + ": judge reply unparseable: " + last_error,
                {input.qa_id, last_raw});
  }
  return {*x, tier_label(*x), last_raw};
}

JudgeCache::JudgeCache(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(*path_);
  if (!in) return;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      const double x = j.at("x").get<double>();
      require_on_grid(x);
      entries_[j.at("key").get<std::string>()] = {x, tier_label(x), j.value("raw_reply", std::string{})};
    } catch (const std::exception& e) {
      throw ParseError(std::string("bad judge cache entry: ") + e.what(), line_no, path_->string());
    }
  }
}

std::string JudgeCache::key(const JudgeInput& input, const Judge& judge, JudgeTarget target) {
  return input.qa_id + "|" + text::hex64(text::fnv1a64(input.prediction)) + "|" + judge.template_version(target) +
         "|" + (judge.client ? judge.client->name() : judge.profile.name);
}

std::optional<JudgeScore> JudgeCache::get(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void JudgeCache::put(const std::string& key, const JudgeScore& score) {
  std::lock_guard lock(mu_);
  if (!entries_.emplace(key, score).second) return;
  if (!path_) return;
  std::ofstream out(*path_, std::ios::app | std::ios::binary);
  if (!out) throw Error(ErrorKind::kStorage, "cannot append to judge cache " + path_->string());
  out << json{{"key", key}, {"x", score.x}, {"raw_reply", score.raw_reply}}.dump() << "\n";
}

std::size_t JudgeCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::string_view to_string(Condition c) { return c == Condition::kBase ? "base" : "base+asr"; }

Condition parse_condition(std::string_view s) {
  if (s == "base") return Condition::kBase;
  if (s == "base+asr") return Condition::kBasePlusAsr;
  throw Error(ErrorKind::kConfig, "condition must be base or base+asr, got " + std::string(s));
}

namespace {

void add(MetricMeans& m, const MetricTriple& t) {
  m.s += t.s;
  m.r2 += t.r2;
  m.r5 += t.r5;
  ++m.n;
}

void finish(MetricMeans& m) {
  if (m.n == 0) return;
  const auto n = static_cast<double>(m.n);
  m.s /= n;
  m.r2 /= n;
  m.r5 /= n;
}

}  // namespace

EvalReport aggregate_report(const std::vector<std::pair<TaskKind, MetricTriple>>& items, Condition condition) {
  if (items.empty()) throw Error(ErrorKind::kEmptyReport, "no judged items to aggregate");
  EvalReport r;
  r.condition = condition;
  for (const auto& [task, triple] : items) {
    add(r.per_task[task], triple);
    add(r.all, triple);
  }
  finish(r.all);
  for (auto& [task, means] : r.per_task) {
    finish(means);
    r.macro.s += means.s;
    r.macro.r2 += means.r2;
    r.macro.r5 += means.r5;
    ++r.macro.n;
  }
  finish(r.macro);
  r.n_submitted = r.n_judged = items.size();
  return r;
}

EvalReport aggregate_scored(std::vector<ScoredItem> items, Condition condition) {
  std::sort(items.begin(), items.end(), [](const ScoredItem& a, const ScoredItem& b) { return a.qa_id < b.qa_id; });
  std::vector<std::pair<TaskKind, MetricTriple>> pairs;
  pairs.reserve(items.size());
  for (const auto& it : items) pairs.emplace_back(it.task, it.metrics);
  EvalReport r = aggregate_report(pairs, condition);
  r.items = std::move(items);
  return r;
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kArtifactMissing, "cannot open " + path.string(), {path.string()});
  std::vector<Prediction> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      Prediction p{j.at("qa_id").get<std::string>(), j.at("prediction").get<std::string>()};
      if (!seen.insert(p.qa_id).second) throw ParseError("duplicate prediction for " + p.qa_id, line_no, path.string());
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no, path.string());
    }
  }
  return out;
}

EvalReport run_evaluation(const Manifest& manifest, const std::vector<qa::QaItem>& qa_items,
                          const std::vector<Prediction>& predictions, const Judge& judge,
                          const EvaluationOptions& options) {
  std::map<std::string, const qa::QaItem*> by_id;
  for (const auto& item : qa_items) by_id[item.qa_id] = &item;

  std::vector<std::string> orphans;
  for (const auto& p : predictions) {
    if (!by_id.count(p.qa_id)) orphans.push_back(p.qa_id);
  }
  if (!orphans.empty()) {
    throw Error(ErrorKind::kReconciliation, fmt::format("{} prediction(s) reference unknown qa_id", orphans.size()),
                orphans);
  }
  if (!manifest.records.empty()) {
    std::vector<std::string> unknown_videos;
    for (const auto& p : predictions) {
      const auto& vid = by_id.at(p.qa_id)->video_id;
      if (!manifest.find(vid)) unknown_videos.push_back(p.qa_id + " -> " + vid);
    }
    if (!unknown_videos.empty()) {
      throw Error(ErrorKind::kReconciliation, "QA items reference videos missing from the manifest", unknown_videos);
    }
  }

  std::vector<std::optional<ScoredItem>> scored(predictions.size());
  std::vector<std::string> failure(predictions.size());
  const unsigned workers = std::max(1u, std::min<unsigned>(options.workers, judge.profile.max_in_flight));
  parallel_for(predictions.size(), workers, [&](std::size_t k) {
    const auto& p = predictions[k];
    const qa::QaItem& item = *by_id.at(p.qa_id);
    JudgeInput input{item.qa_id, item.question, item.answer, item.evidence, answer_span(p.prediction)};
    try {
      std::optional<JudgeScore> score;
      std::string key;
      if (options.cache) {
        key = JudgeCache::key(input, judge, JudgeTarget::kAnswer);
        score = options.cache->get(key);
      }
      if (!score) {
        score = judge_response(input, judge, JudgeTarget::kAnswer);
        if (options.cache) options.cache->put(key, *score);
      }
      scored[k] = ScoredItem{item.qa_id, item.task, score->x, score_to_metrics(score->x)};
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kJudgeParse && e.kind() != ErrorKind::kValidation) throw;
      spdlog::warn("excluding {}: {}", p.qa_id, e.what());
      failure[k] = e.what();
    }
  });

  std::vector<ScoredItem> items;
  std::vector<ExcludedItem> excluded;
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    if (scored[k]) {
      items.push_back(std::move(*scored[k]));
    } else {
      excluded.push_back({predictions[k].qa_id, failure[k]});
    }
  }
  std::sort(excluded.begin(), excluded.end(),
            [](const ExcludedItem& a, const ExcludedItem& b) { return a.qa_id < b.qa_id; });
  EvalReport r;
  if (items.empty()) {
    r.condition = options.condition;
  } else {
    r = aggregate_scored(std::move(items), options.condition);
  }
  r.excluded = std::move(excluded);
  r.n_submitted = predictions.size();
  r.n_excluded = r.excluded.size();
  r.n_judged = r.n_submitted - r.n_excluded;
  if (r.n_judged == 0) throw Error(ErrorKind::kEmptyReport, "no prediction could be judged");
  return r;
}

namespace {

json means_json(const MetricMeans& m) { return {{"S", m.s}, {"R2", m.r2}, {"R5", m.r5}, {"n", m.n}}; }

}  // namespace

json report_to_json(const EvalReport& report) {
  json per_task = json::object();
  for (const auto& [task, means] : report.per_task) per_task[std::string(qa::to_string(task))] = means_json(means);
  json macro = means_json(report.macro);
  macro["label"] = "macro: unweighted mean of per-task means";
  macro.erase("n");
  macro["n_tasks"] = report.macro.n;
  json items = json::array();
  for (const auto& it : report.items) {
    items.push_back({{"qa_id", it.qa_id},
                     {"task", std::string(qa::to_string(it.task))},
                     {"x", it.x},
                     {"S", it.metrics.s},
                     {"R2", it.metrics.r2},
                     {"R5", it.metrics.r5}});
  }
  json excluded = json::array();
  for (const auto& e : report.excluded) excluded.push_back({{"qa_id", e.qa_id}, {"reason", e.reason}});
  return {{"condition", std::string(to_string(report.condition))},
          {"n_submitted", report.n_submitted},
          {"n_judged", report.n_judged},
          {"n_excluded", report.n_excluded},
          {"per_task", per_task},
          {"all", means_json(report.all)},
          {"macro", macro},
          {"items", items},
          {"excluded", excluded}};
}

std::string report_to_tsv(const EvalReport& report) {
  std::string out = "Metric";
  for (TaskKind t : qa::kAllTasks) out += "\t" + std::string(qa::to_string(t));
  out += "\tALL\n";
  auto row = [&](const char* name, auto get) {
    out += name;
    for (TaskKind t : qa::kAllTasks) {
      auto it = report.per_task.find(t);
      out += "\t" + (it == report.per_task.end() ? std::string("-") : get(it->second));
    }
    out += "\t" + get(report.all) + "\n";
  };
  row("S", [](const MetricMeans& m) { return fmt::format("{:.3f}", m.s); });
  row("R3", [](const MetricMeans& m) { return fmt::format("{:.3f}", m.r2); });
  row("R5", [](const MetricMeans& m) { return fmt::format("{:.3f}", m.r5); });
  row("n", [](const MetricMeans& m) { return std::to_string(m.n); });
  return out;
}

}  // namespace evads::evaluator
