#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evads/aligner.hpp"
#include "evads/qa.hpp"

struct sqlite3;

namespace evads::review {

using qa::QaItem;
using qa::QaStatus;

enum class Pillar { kAccuracy, kTraceability, kDiscriminability, kCommercialRelevance };
inline constexpr Pillar kAllPillars[] = {Pillar::kAccuracy, Pillar::kTraceability, Pillar::kDiscriminability,
                                         Pillar::kCommercialRelevance};
std::string_view to_string(Pillar p);
Pillar parse_pillar(std::string_view s);

enum class Decision { kAccept, kReject };
std::string_view to_string(Decision d);
Decision parse_decision(std::string_view s);

struct ReviewVerdict {
  std::string qa_id;
  Decision decision = Decision::kAccept;
  /// Missing pillars count as failing.
  std::map<Pillar, bool> pillars;
  std::string reason;
  std::string reviewer_id;
  /// Milliseconds since the epoch; filled by the store when 0.
  std::int64_t timestamp_ms = 0;

  bool pillar_passes(Pillar p) const;
};

/// Accept needs all four pillars passing; reject needs a failing pillar and a
/// reason. Throws Error(kValidation).
void validate_verdict(const ReviewVerdict& v);

nlohmann::json to_json(const ReviewVerdict& v);
ReviewVerdict verdict_from_json(const nlohmann::json& j);

/// One entry of an item's append-only history.
struct HistoryEvent {
  /// "enqueued", "verdict", "regenerated" or "reopened".
  std::string kind;
  std::string actor;
  std::string note;
  std::optional<ReviewVerdict> verdict;
  QaStatus status_after = QaStatus::kPending;
  int cycle = 0;
  std::int64_t timestamp_ms = 0;
};

nlohmann::json to_json(const HistoryEvent& e);

struct ItemRecord {
  QaItem item;
  std::vector<HistoryEvent> history;
  std::optional<std::string> lease_reviewer;
  std::optional<std::int64_t> lease_expiry_ms;
};

/// A leased pending item with everything a reviewer needs to judge it.
struct LeasedItem {
  QaItem item;
  std::string rendered_context;
  std::string rendered_evidence;
  std::map<std::string, std::string> metadata;
  std::int64_t lease_expiry_ms = 0;
};

struct Stats {
  std::size_t total = 0;
  std::map<std::string, std::size_t> by_status;
  std::map<std::string, std::size_t> by_task;
  std::map<int, std::size_t> by_cycle;
  std::size_t leased = 0;
};

nlohmann::json to_json(const Stats& s);

using Clock = std::function<std::int64_t()>;
std::int64_t system_clock_ms();

struct StoreOptions {
  std::chrono::milliseconds lease_ttl = std::chrono::minutes(30);
  Clock clock = system_clock_ms;
};

/// Durable review state in a single sqlite file. Every mutation runs in one
/// transaction; the object is safe to share between threads.
class ReviewStore {
 public:
  explicit ReviewStore(const std::filesystem::path& path, StoreOptions options = {});
  ~ReviewStore();
  ReviewStore(const ReviewStore&) = delete;
  ReviewStore& operator=(const ReviewStore&) = delete;

  /// Inserts new items (pending or manual_correction). Re-enqueueing identical
  /// content is a no-op; a rejected item may be replaced by its cycle + 1
  /// regeneration. Any other collision throws Error(kConflict) and nothing is
  /// written. Returns the number of items inserted or replaced.
  std::size_t enqueue(const std::vector<QaItem>& items);

  void put_context(const aligner::StructuredContext& context);
  std::optional<aligner::StructuredContext> context(const std::string& video_id) const;

  /// Leases the oldest pending item not leased by someone else. An empty
  /// queue returns nullopt. A reviewer who already holds a lease gets it back.
  std::optional<LeasedItem> next_pending(const std::string& reviewer_id);

  /// Applies a verdict to a pending item leased by the verdict's reviewer and
  /// returns the new status. Throws Error(kState) for a missing, terminal or
  /// unleased item and Error(kValidation) for an inconsistent verdict.
  QaStatus submit_verdict(ReviewVerdict verdict);

  /// Rejected items below the cycle limit, oldest first.
  std::vector<QaItem> awaiting_regeneration() const;

  /// Accepted items as JSON lines sorted by video_id then qa_id.
  std::string accepted_jsonl(std::size_t* count = nullptr) const;
  /// Writes accepted_jsonl() to `destination`; Error(kStorage) on failure.
  std::size_t export_accepted(const std::filesystem::path& destination) const;

  Stats stats() const;
  std::optional<ItemRecord> item(const std::string& qa_id) const;
  std::vector<QaItem> all_items() const;

  /// Senior-audit override: returns an accepted or manual_correction item to
  /// pending at its current cycle and records a "reopened" event.
  QaStatus reopen(const std::string& qa_id, const std::string& auditor_id, const std::string& reason);

 private:
  class Tx;
  void exec(const char* sql);
  std::int64_t now() const;
  void append_event(const std::string& qa_id, const HistoryEvent& e);
  std::optional<QaItem> load_item(const std::string& qa_id) const;
  void write_item(const QaItem& item, bool bump_seq);

  sqlite3* db_ = nullptr;
  StoreOptions options_;
  mutable std::recursive_mutex mu_;
};

}  // namespace evads::review
