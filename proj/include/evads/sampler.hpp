#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evads/corpus.hpp"

namespace evads::sampler {

struct SamplingConfig {
  double a = 0.5;     // upper bound of the per-category ratio, in (0, 1]
  double b = 1000.0;  // inflection count, > 0
  std::uint64_t seed = 0;

  void validate() const;
};

/// SplitMix64: 64-bit state, increment 0x9e3779b97f4a7c15, then the
/// Stafford variant-13 finalizer. Fully specified so plans reproduce anywhere.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();
  /// Uniform integer in [0, bound) by rejection sampling; bound > 0.
  std::uint64_t below(std::uint64_t bound);

 private:
  std::uint64_t state_;
};

struct CategoryPlan {
  std::size_t original_count = 0;
  double ratio = 0.0;
  std::size_t target_count = 0;
  std::vector<std::string> selected_ids;
};

struct SamplingPlan {
  SamplingConfig config;
  std::map<std::string, CategoryPlan> per_category;

  std::size_t total_selected() const;
};

/// f(x) = a / (1 + exp(1 - b/x)) for a category holding x videos.
double sampling_ratio(double x, const SamplingConfig& cfg);

/// round-half-up(ratio * count), at least 1 when count >= 1 and ratio > 0,
/// never more than count.
std::size_t target_count(double ratio, std::size_t count);

/// Ids sorted lexicographically, Fisher-Yates shuffled with a generator seeded
/// from (seed, category), then truncated to the target count.
SamplingPlan build_plan(const Manifest& manifest, const SamplingConfig& cfg);

std::string plan_to_json(const SamplingPlan& plan);

/// The subset of the manifest selected by the plan, in manifest order.
Manifest apply_plan(const Manifest& manifest, const SamplingPlan& plan);

struct FilterVerdict {
  bool keep = true;
  std::string reason;
};

struct FilterRule {
  std::string name;
  std::function<FilterVerdict(const VideoRecord&)> predicate;
};

struct Dropped {
  std::string video_id;
  std::string rule;
  std::string reason;
};

struct FilterResult {
  Manifest kept;
  std::vector<Dropped> dropped;
};

/// Evaluates rules in order; the first rule that drops a record is recorded.
FilterResult apply_filters(const Manifest& manifest, const std::vector<FilterRule>& rules);

FilterRule min_duration(double seconds);
FilterRule require_metadata(std::string key);
/// `kinds` is a subset of {"embedding", "asr", "ocr"}.
FilterRule require_artifacts(std::vector<std::string> kinds);

/// Builds a shipped rule from its CLI form `name=arg`, e.g. `min_duration=5`,
/// `require_metadata=category`, `require_artifacts=asr,ocr`.
FilterRule parse_rule(const std::string& spec);

}  // namespace evads::sampler
