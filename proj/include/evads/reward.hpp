#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evads/evaluator.hpp"
#include "evads/qa.hpp"

namespace evads::reward {

struct TraceOutput {
  std::string raw;
  std::optional<std::string> think;
  std::optional<std::string> answer;
  /// 0 when well formed, -1 otherwise.
  int fmt_penalty = -1;

  bool well_formed() const { return fmt_penalty == 0; }
};

/// Well formed means exactly one `<think>…</think>` followed by exactly one
/// `<answer>…</answer>`, with only whitespace around and between the blocks.
TraceOutput validate_format(const std::string& raw);

struct RewardConfig {
  double alpha1 = 0.8;
  double alpha2 = 0.2;
  double epsilon = 1e-4;

  /// Throws Error(kConfig) unless both weights are >= 0, they sum to 1 (within
  /// 1e-12), and epsilon > 0.
  void validate() const;
};

/// (S + R2 + R5) / 3 on the five-level grid; Error(kDomain) off grid.
double granular_reward(double x);

double trace_reward(double x_a, double x_t, int fmt_penalty, const RewardConfig& cfg = {});
double trace_reward(double x_a, double x_t, const TraceOutput& fmt, const RewardConfig& cfg = {});

/// (R_i - mean) / (std + epsilon) with the population std. A group whose
/// rewards are all equal yields exact zeros. Error(kGroupSize) when n < 2.
std::vector<double> group_advantages(const std::vector<double>& rewards, const RewardConfig& cfg = {});

struct GroupRollout {
  std::string prompt_id;
  std::string question;
  std::string ground_truth;
  qa::EvidenceChain evidence;
  std::vector<TraceOutput> traces;
  /// Per trace; nullopt for traces excluded after a judge failure.
  std::vector<std::optional<double>> x_a;
  std::vector<std::optional<double>> x_t;
  std::vector<std::optional<double>> rewards;
  std::vector<std::optional<double>> advantages;
};

/// Judges the answer span (x_a) and think span (x_t) of every trace, then
/// fills rewards and advantages. Malformed traces score x_a = x_t = 0 without
/// a judge call. A trace whose judging fails is excluded; fewer than two
/// remaining traces raise Error(kGroup).
GroupRollout score_group(GroupRollout rollout, const evaluator::Judge& judge, const RewardConfig& cfg = {});

GroupRollout rollout_from_json(const nlohmann::json& j);
nlohmann::json rollout_to_json(const GroupRollout& rollout);
std::vector<GroupRollout> read_rollouts(const std::filesystem::path& path);

}  // namespace evads::reward
