#include "evads/reward.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "evads/error.hpp"
#include "evads/text.hpp"

namespace evads::reward {

using json = nlohmann::json;

namespace {

std::size_t count_of(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + needle.size())) ++n;
  return n;
}

bool blank(const std::string& s, std::size_t from, std::size_t to) {
  for (std::size_t i = from; i < to; ++i) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    if (c != ' ' && c != '\t' && c != '\n' && c != '\r') return false;
  }
  return true;
}

}  // namespace

TraceOutput validate_format(const std::string& raw) {
  TraceOutput out;
  out.raw = raw;
  static const std::string kThinkOpen = "<think>", kThinkClose = "</think>";
  static const std::string kAnswerOpen = "<answer>", kAnswerClose = "</answer>";
  for (const auto* tag : {&kThinkOpen, &kThinkClose, &kAnswerOpen, &kAnswerClose}) {
    if (count_of(raw, *tag) != 1) return out;
  }
  const auto t0 = raw.find(kThinkOpen);
  const auto t1 = raw.find(kThinkClose);
  const auto a0 = raw.find(kAnswerOpen);
  const auto a1 = raw.find(kAnswerClose);
  if (!(t0 < t1 && t1 < a0 && a0 < a1)) return out;
  if (!blank(raw, 0, t0) || !blank(raw, t1 + kThinkClose.size(), a0) || !blank(raw, a1 + kAnswerClose.size(), raw.size())) {
    return out;
  }
  out.think = raw.substr(t0 + kThinkOpen.size(), t1 - t0 - kThinkOpen.size());
  out.answer = raw.substr(a0 + kAnswerOpen.size(), a1 - a0 - kAnswerOpen.size());
  out.fmt_penalty = 0;
  return out;
}

void RewardConfig::validate() const {
  if (!(alpha1 >= 0.0) || !(alpha2 >= 0.0)) throw Error(ErrorKind::kConfig, "alpha weights must be non-negative");
  if (std::abs(alpha1 + alpha2 - 1.0) > 1e-12) {
    throw Error(ErrorKind::kConfig, fmt::format("alpha1 + alpha2 must equal 1, got {} + {}", alpha1, alpha2));
  }
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw Error(ErrorKind::kConfig, "epsilon must be positive");
}

double granular_reward(double x) {
  const auto m = evaluator::score_to_metrics(x);
  return (m.s + m.r2 + m.r5) / 3.0;
}

double trace_reward(double x_a, double x_t, int fmt_penalty, const RewardConfig& cfg) {
  if (fmt_penalty != 0 && fmt_penalty != -1) throw Error(ErrorKind::kDomain, "format penalty must be 0 or -1");
  return cfg.alpha1 * granular_reward(x_a) + cfg.alpha2 * granular_reward(x_t) + fmt_penalty;
}

double trace_reward(double x_a, double x_t, const TraceOutput& fmt, const RewardConfig& cfg) {
  return trace_reward(x_a, x_t, fmt.fmt_penalty, cfg);
}

std::vector<double> group_advantages(const std::vector<double>& rewards, const RewardConfig& cfg) {
  if (rewards.size() < 2) {
    throw Error(ErrorKind::kGroupSize, fmt::format("advantages need a group of at least 2, got {}", rewards.size()));
  }
  const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
  if (*lo == *hi) return std::vector<double>(rewards.size(), 0.0);
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  const double denom = std::sqrt(ss / n) + cfg.epsilon;
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back((r - mean) / denom);
  return out;
}

GroupRollout score_group(GroupRollout rollout, const evaluator::Judge& judge, const RewardConfig& cfg) {
  cfg.validate();
  const std::size_t n = rollout.traces.size();
  rollout.x_a.assign(n, std::nullopt);
  rollout.x_t.assign(n, std::nullopt);
  rollout.rewards.assign(n, std::nullopt);
  rollout.advantages.assign(n, std::nullopt);

  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < n; ++i) {
    const TraceOutput& trace = rollout.traces[i];
    if (!trace.well_formed()) {
      rollout.x_a[i] = 0.0;
      rollout.x_t[i] = 0.0;
      kept.push_back(i);
      continue;
    }
    const std::string id = fmt::format("{}#{}", rollout.prompt_id, i);
    try {
      evaluator::JudgeInput answer{id, rollout.question, rollout.ground_truth, rollout.evidence,
                                   text::trim(*trace.answer)};
      evaluator::JudgeInput thinking{id, rollout.question, rollout.ground_truth, rollout.evidence,
                                     text::trim(*trace.think)};
      // An empty span has nothing to judge and scores 0.
      auto judged = [&](const evaluator::JudgeInput& in, evaluator::JudgeTarget target) {
        return in.prediction.empty() ? 0.0 : evaluator::judge_response(in, judge, target).x;
      };
      rollout.x_a[i] = judged(answer, evaluator::JudgeTarget::kAnswer);
      rollout.x_t[i] = judged(thinking, evaluator::JudgeTarget::kTrace);
      kept.push_back(i);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kJudgeParse && e.kind() != ErrorKind::kBackend &&
          e.kind() != ErrorKind::kValidation) {
        throw;
      }
      spdlog::warn("{}: excluding trace {}: {}", rollout.prompt_id, i, e.what());
      rollout.x_a[i].reset();
      rollout.x_t[i].reset();
    }
  }
  if (kept.size() < 2) {
    throw Error(ErrorKind::kGroup,
                fmt::format("{}: only {} of {} traces could be scored", rollout.prompt_id, kept.size(), n));
  }
  std::vector<double> rewards;
  for (std::size_t i : kept) {
    const double r = trace_reward(*rollout.x_a[i], *rollout.x_t[i], rollout.traces[i], cfg);
    rollout.rewards[i] = r;
    rewards.push_back(r);
  }
  const auto adv = group_advantages(rewards, cfg);
  for (std::size_t k = 0; k < kept.size(); ++k) rollout.advantages[kept[k]] = adv[k];
  return rollout;
}

GroupRollout rollout_from_json(const json& j) {
  GroupRollout r;
  try {
    r.prompt_id = j.at("prompt_id").get<std::string>();
    r.question = j.value("question", std::string{});
    r.ground_truth = j.value("ground_truth", std::string{});
    if (j.contains("evidence")) r.evidence = qa::evidence_from_json(j.at("evidence"));
    for (const auto& t : j.at("traces")) r.traces.push_back(validate_format(t.get<std::string>()));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, std::string("malformed rollout: ") + e.what());
  }
  return r;
}

namespace {

json optional_array(const std::vector<std::optional<double>>& v) {
  json a = json::array();
  for (const auto& x : v) a.push_back(x ? json(*x) : json(nullptr));
  return a;
}

}  // namespace

json rollout_to_json(const GroupRollout& r) {
  json traces = json::array();
  for (const auto& t : r.traces) traces.push_back(t.raw);
  json j = {{"prompt_id", r.prompt_id}, {"traces", traces}};
  if (!r.question.empty()) j["question"] = r.question;
  if (!r.ground_truth.empty()) j["ground_truth"] = r.ground_truth;
  if (!r.evidence.empty()) j["evidence"] = qa::evidence_to_json(r.evidence);
  j["x_a"] = optional_array(r.x_a);
  j["x_t"] = optional_array(r.x_t);
  j["R"] = optional_array(r.rewards);
  j["A"] = optional_array(r.advantages);
  return j;
}

std::vector<GroupRollout> read_rollouts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kArtifactMissing, "cannot open " + path.string(), {path.string()});
  std::vector<GroupRollout> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(rollout_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw ParseError(e.what(), line_no, path.string());
    } catch (const Error& e) {
      throw ParseError(e.what(), line_no, path.string());
    }
  }
  return out;
}

}  // namespace evads::reward
