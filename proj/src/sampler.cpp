#include "evads/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "evads/error.hpp"
#include "evads/text.hpp"

namespace evads::sampler {

using json = nlohmann::json;

void SamplingConfig::validate() const {
  if (!(a > 0.0 && a <= 1.0)) throw Error(ErrorKind::kConfig, fmt::format("a must lie in (0, 1], got {}", a));
  if (!(b > 0.0) || !std::isfinite(b)) throw Error(ErrorKind::kConfig, fmt::format("b must be > 0, got {}", b));
}

std::uint64_t SplitMix64::next() {
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t SplitMix64::below(std::uint64_t bound) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t r;
  do {
    r = next();
  } while (r >= limit);
  return r % bound;
}

std::size_t SamplingPlan::total_selected() const {
  std::size_t n = 0;
  for (const auto& [_, c] : per_category) n += c.selected_ids.size();
  return n;
}

double sampling_ratio(double x, const SamplingConfig& cfg) {
  cfg.validate();
  if (!(x > 0.0)) throw Error(ErrorKind::kDomain, fmt::format("category count must be >= 1, got {}", x));
  return cfg.a / (1.0 + std::exp(1.0 - cfg.b / x));
}

std::size_t target_count(double ratio, std::size_t count) {
  if (count == 0 || !(ratio > 0.0)) return 0;
  auto n = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(count) + 0.5));
  return std::clamp<std::size_t>(n, 1, count);
}

SamplingPlan build_plan(const Manifest& manifest, const SamplingConfig& cfg) {
  cfg.validate();
  if (manifest.records.empty()) throw Error(ErrorKind::kPlan, "manifest has no records");
  std::map<std::string, std::vector<std::string>> by_category;
  for (const auto& r : manifest.records) by_category[r.category].push_back(r.video_id);
  if (by_category.empty()) throw Error(ErrorKind::kPlan, "no categories to sample");

  SamplingPlan plan;
  plan.config = cfg;
  for (auto& [category, ids] : by_category) {
    std::sort(ids.begin(), ids.end());
    CategoryPlan cp;
    cp.original_count = ids.size();
    cp.ratio = sampling_ratio(static_cast<double>(ids.size()), cfg);
    cp.target_count = target_count(cp.ratio, ids.size());

    SplitMix64 rng(cfg.seed ^ text::fnv1a64(category));
    for (std::size_t i = ids.size(); i > 1; --i) {
      std::swap(ids[i - 1], ids[rng.below(i)]);
    }
    cp.selected_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(cp.target_count));
    plan.per_category.emplace(category, std::move(cp));
  }
  return plan;
}

std::string plan_to_json(const SamplingPlan& plan) {
  // Written by hand so ratios carry a fixed 10 decimal places.
  std::ostringstream out;
  out << "{\n";
  out << fmt::format("  \"config\": {{\"a\": {:.10f}, \"b\": {:.10f}, \"seed\": {}, \"prng\": \"splitmix64\"}},\n",
                     plan.config.a, plan.config.b, plan.config.seed);
  out << "  \"total_selected\": " << plan.total_selected() << ",\n";
  out << "  \"categories\": [";
  bool first = true;
  for (const auto& [category, cp] : plan.per_category) {
    out << (first ? "\n" : ",\n");
    first = false;
    out << "    {\"category\": " << json(category).dump() << ", \"original_count\": " << cp.original_count
        << ", \"ratio\": " << fmt::format("{:.10f}", cp.ratio) << ", \"target_count\": " << cp.target_count
        << ", \"selected_ids\": " << json(cp.selected_ids).dump() << "}";
  }
  out << (first ? "]\n" : "\n  ]\n");
  out << "}\n";
  return out.str();
}

Manifest apply_plan(const Manifest& manifest, const SamplingPlan& plan) {
  std::set<std::string> chosen;
  for (const auto& [_, cp] : plan.per_category) chosen.insert(cp.selected_ids.begin(), cp.selected_ids.end());
  Manifest out;
  out.schema_version = manifest.schema_version;
  out.base_dir = manifest.base_dir;
  for (const auto& r : manifest.records) {
    if (chosen.count(r.video_id)) out.records.push_back(r);
  }
  return out;
}

FilterResult apply_filters(const Manifest& manifest, const std::vector<FilterRule>& rules) {
  std::set<std::string> names;
  for (const auto& rule : rules) {
    if (!names.insert(rule.name).second) {
      throw Error(ErrorKind::kConfig, "duplicate filter rule name '" + rule.name + "'", {rule.name});
    }
  }
  FilterResult result;
  result.kept.schema_version = manifest.schema_version;
  result.kept.base_dir = manifest.base_dir;
  for (const auto& record : manifest.records) {
    bool kept = true;
    for (const auto& rule : rules) {
      FilterVerdict v = rule.predicate(record);
      if (!v.keep) {
        result.dropped.push_back({record.video_id, rule.name, std::move(v.reason)});
        kept = false;
        break;
      }
    }
    if (kept) result.kept.records.push_back(record);
  }
  return result;
}

FilterRule min_duration(double seconds) {
  return {"min_duration", [seconds](const VideoRecord& r) -> FilterVerdict {
            if (r.duration_s < seconds) return {false, fmt::format("duration {}s < {}s", r.duration_s, seconds)};
            return {};
          }};
}

FilterRule require_metadata(std::string key) {
  return {"require_metadata", [key](const VideoRecord& r) -> FilterVerdict {
            auto it = r.metadata.find(key);
            bool present = it != r.metadata.end() && !text::trim(it->second).empty();
            if (!present && key == "category") present = !text::trim(r.category).empty();
            if (!present) return {false, "missing metadata '" + key + "'"};
            return {};
          }};
}

FilterRule require_artifacts(std::vector<std::string> kinds) {
  for (const auto& k : kinds) {
    if (k != "embedding" && k != "asr" && k != "ocr") {
      throw Error(ErrorKind::kConfig, "unknown artifact kind '" + k + "' (expected embedding, asr, ocr)");
    }
  }
  return {"require_artifacts", [kinds](const VideoRecord& r) -> FilterVerdict {
            for (const auto& k : kinds) {
              const bool has = (k == "embedding" && r.embedding_ref) || (k == "asr" && r.asr_ref) ||
                               (k == "ocr" && r.ocr_ref);
              if (!has) return {false, "missing " + k + " artifact"};
            }
            return {};
          }};
}

FilterRule parse_rule(const std::string& spec) {
  const auto eq = spec.find('=');
  const std::string name = text::trim(spec.substr(0, eq));
  const std::string arg = eq == std::string::npos ? std::string{} : text::trim(spec.substr(eq + 1));
  if (name == "min_duration") {
    try {
      std::size_t used = 0;
      const double v = std::stod(arg, &used);
      if (used != arg.size() || !(v >= 0.0)) throw std::invalid_argument(arg);
      return min_duration(v);
    } catch (const std::exception&) {
      throw Error(ErrorKind::kConfig, "min_duration needs a non-negative number of seconds, got '" + arg + "'");
    }
  }
  if (name == "require_metadata") {
    if (arg.empty()) throw Error(ErrorKind::kConfig, "require_metadata needs a key");
    return require_metadata(arg);
  }
  if (name == "require_artifacts") {
    std::vector<std::string> kinds;
    std::stringstream ss(arg);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!text::trim(item).empty()) kinds.push_back(text::trim(item));
    }
    if (kinds.empty()) throw Error(ErrorKind::kConfig, "require_artifacts needs at least one kind");
    return require_artifacts(std::move(kinds));
  }
  throw Error(ErrorKind::kConfig, "unknown filter rule '" + name + "'");
}

}  // namespace evads::sampler
