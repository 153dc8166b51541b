#include "evads/review_store.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>
#include <sqlite3.h>

#include "evads/annotator.hpp"
#include "evads/error.hpp"

namespace evads::review {

using json = nlohmann::json;

std::string_view to_string(Pillar p) {
  switch (p) {
    case Pillar::kAccuracy: return "accuracy";
    case Pillar::kTraceability: return "traceability";
    case Pillar::kDiscriminability: return "discriminability";
    case Pillar::kCommercialRelevance: return "commercial_relevance";
  }
  return "?";
}

Pillar parse_pillar(std::string_view s) {
  for (Pillar p : kAllPillars) {
    if (s == to_string(p)) return p;
  }
  throw Error(ErrorKind::kValidation, "unknown pillar: " + std::string(s));
}

std::string_view to_string(Decision d) { return d == Decision::kAccept ? "accept" : "reject"; }

Decision parse_decision(std::string_view s) {
  if (s == "accept") return Decision::kAccept;
  if (s == "reject") return Decision::kReject;
  throw Error(ErrorKind::kValidation, "decision must be accept or reject, got " + std::string(s));
}

bool ReviewVerdict::pillar_passes(Pillar p) const {
  auto it = pillars.find(p);
  return it != pillars.end() && it->second;
}

void validate_verdict(const ReviewVerdict& v) {
  if (v.qa_id.empty()) throw Error(ErrorKind::kValidation, "verdict has no qa_id");
  if (v.reviewer_id.empty()) throw Error(ErrorKind::kValidation, "verdict has no reviewer_id");
  std::vector<std::string> failing;
  for (Pillar p : kAllPillars) {
    if (!v.pillar_passes(p)) failing.emplace_back(to_string(p));
  }
  if (v.decision == Decision::kAccept && !failing.empty()) {
    throw Error(ErrorKind::kValidation, "accept requires every pillar to pass", failing);
  }
  if (v.decision == Decision::kReject) {
    if (failing.empty()) throw Error(ErrorKind::kValidation, "reject requires at least one failing pillar");
    if (v.reason.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw Error(ErrorKind::kValidation, "reject requires a reason");
    }
  }
}

json to_json(const ReviewVerdict& v) {
  json pillars = json::object();
  for (Pillar p : kAllPillars) pillars[std::string(to_string(p))] = v.pillar_passes(p);
  return {{"qa_id", v.qa_id},
          {"decision", std::string(to_string(v.decision))},
          {"pillars", pillars},
          {"reason", v.reason},
          {"reviewer_id", v.reviewer_id},
          {"timestamp_ms", v.timestamp_ms}};
}

ReviewVerdict verdict_from_json(const json& j) {
  try {
    ReviewVerdict v;
    v.qa_id = j.at("qa_id").get<std::string>();
    v.decision = parse_decision(j.at("decision").get<std::string>());
    if (j.contains("pillars")) {
      for (const auto& [k, val] : j.at("pillars").items()) v.pillars[parse_pillar(k)] = val.get<bool>();
    }
    v.reason = j.value("reason", std::string{});
    v.reviewer_id = j.value("reviewer_id", std::string{});
    v.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
    return v;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, std::string("malformed verdict: ") + e.what());
  }
}

json to_json(const HistoryEvent& e) {
  json j = {{"kind", e.kind},
            {"actor", e.actor},
            {"note", e.note},
            {"status_after", std::string(qa::to_string(e.status_after))},
            {"cycle", e.cycle},
            {"timestamp_ms", e.timestamp_ms}};
  if (e.verdict) j["verdict"] = to_json(*e.verdict);
  return j;
}

namespace {

HistoryEvent event_from_json(const json& j) {
  HistoryEvent e;
  e.kind = j.at("kind").get<std::string>();
  e.actor = j.value("actor", std::string{});
  e.note = j.value("note", std::string{});
  e.status_after = qa::parse_status(j.at("status_after").get<std::string>());
  e.cycle = j.at("cycle").get<int>();
  e.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
  if (j.contains("verdict")) e.verdict = verdict_from_json(j.at("verdict"));
  return e;
}

}  // namespace

json to_json(const Stats& s) {
  json cycles = json::object();
  for (const auto& [c, n] : s.by_cycle) cycles[std::to_string(c)] = n;
  return {{"total", s.total}, {"by_status", s.by_status}, {"by_task", s.by_task}, {"by_cycle", cycles},
          {"leased", s.leased}};
}

std::int64_t system_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

namespace {

[[noreturn]] void fail(sqlite3* db, const std::string& what) {
  throw Error(ErrorKind::kStorage, what + ": " + (db ? sqlite3_errmsg(db) : "no database"));
}

class Stmt {
 public:
  Stmt(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &s_, nullptr) != SQLITE_OK) fail(db, std::string("prepare ") + sql);
  }
  ~Stmt() { sqlite3_finalize(s_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int i, const std::string& v) {
    check(sqlite3_bind_text(s_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
    return *this;
  }
  Stmt& bind(int i, std::int64_t v) {
    check(sqlite3_bind_int64(s_, i, v));
    return *this;
  }
  Stmt& bind_null(int i) {
    check(sqlite3_bind_null(s_, i));
    return *this;
  }
  /// True while a row is available.
  bool step() {
    const int rc = sqlite3_step(s_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    fail(db_, "step");
  }
  void run() {
    while (step()) {
    }
  }
  std::string text(int col) const {
    const auto* p = sqlite3_column_text(s_, col);
    return p ? std::string(reinterpret_cast<const char*>(p), static_cast<std::size_t>(sqlite3_column_bytes(s_, col)))
             : std::string{};
  }
  std::int64_t int64(int col) const { return sqlite3_column_int64(s_, col); }
  bool is_null(int col) const { return sqlite3_column_type(s_, col) == SQLITE_NULL; }

 private:
  void check(int rc) {
    if (rc != SQLITE_OK) fail(db_, "bind");
  }
  sqlite3* db_;
  sqlite3_stmt* s_ = nullptr;
};

/// Identity of an item's reviewable content, ignoring workflow state.
std::string content_key(const QaItem& item) {
  json j = qa::to_json(item);
  j.erase("status");
  j.erase("flags");
  return j.dump();
}

}  // namespace

class ReviewStore::Tx {
 public:
  explicit Tx(ReviewStore& store) : store_(store) { store_.exec("BEGIN IMMEDIATE"); }
  ~Tx() {
    if (!done_) sqlite3_exec(store_.db_, "ROLLBACK", nullptr, nullptr, nullptr);
  }
  void commit() {
    store_.exec("COMMIT");
    done_ = true;
  }

 private:
  ReviewStore& store_;
  bool done_ = false;
};

ReviewStore::ReviewStore(const std::filesystem::path& path, StoreOptions options) : options_(std::move(options)) {
  if (!options_.clock) options_.clock = system_clock_ms;
  if (sqlite3_open_v2(path.string().c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                      nullptr) != SQLITE_OK) {
    const std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    db_ = nullptr;
    throw Error(ErrorKind::kStorage, "cannot open review store " + path.string() + ": " + msg);
  }
  sqlite3_busy_timeout(db_, 5000);
  exec("PRAGMA journal_mode=WAL");
  exec("PRAGMA synchronous=FULL");
  exec(
      "CREATE TABLE IF NOT EXISTS items ("
      " qa_id TEXT PRIMARY KEY, seq INTEGER NOT NULL, video_id TEXT NOT NULL, task TEXT NOT NULL,"
      " status TEXT NOT NULL, cycle INTEGER NOT NULL, body TEXT NOT NULL,"
      " lease_reviewer TEXT, lease_expiry INTEGER)");
  exec("CREATE TABLE IF NOT EXISTS events (id INTEGER PRIMARY KEY AUTOINCREMENT, qa_id TEXT NOT NULL, body TEXT NOT NULL)");
  exec("CREATE INDEX IF NOT EXISTS events_by_item ON events(qa_id, id)");
  exec("CREATE TABLE IF NOT EXISTS contexts (video_id TEXT PRIMARY KEY, body TEXT NOT NULL)");
}

ReviewStore::~ReviewStore() {
  if (db_) sqlite3_close(db_);
}

void ReviewStore::exec(const char* sql) {
  char* err = nullptr;
  if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    const std::string msg = err ? err : "unknown";
    sqlite3_free(err);
    throw Error(ErrorKind::kStorage, std::string(sql) + ": " + msg);
  }
}

std::int64_t ReviewStore::now() const { return options_.clock(); }

void ReviewStore::append_event(const std::string& qa_id, const HistoryEvent& e) {
  Stmt(db_, "INSERT INTO events(qa_id, body) VALUES(?, ?)").bind(1, qa_id).bind(2, to_json(e).dump()).run();
}

std::optional<QaItem> ReviewStore::load_item(const std::string& qa_id) const {
  Stmt st(db_, "SELECT body FROM items WHERE qa_id = ?");
  st.bind(1, qa_id);
  if (!st.step()) return std::nullopt;
  return qa::qa_from_json(json::parse(st.text(0)));
}

void ReviewStore::write_item(const QaItem& item, bool bump_seq) {
  if (bump_seq) {
    Stmt seq(db_, "SELECT COALESCE(MAX(seq), 0) + 1 FROM items");
    seq.step();
    const std::int64_t next = seq.int64(0);
    Stmt(db_,
         "INSERT INTO items(qa_id, seq, video_id, task, status, cycle, body, lease_reviewer, lease_expiry)"
         " VALUES(?1, ?2, ?3, ?4, ?5, ?6, ?7, NULL, NULL)"
         " ON CONFLICT(qa_id) DO UPDATE SET seq = ?2, video_id = ?3, task = ?4, status = ?5, cycle = ?6, body = ?7,"
         " lease_reviewer = NULL, lease_expiry = NULL")
        .bind(1, item.qa_id)
        .bind(2, next)
        .bind(3, item.video_id)
        .bind(4, std::string(qa::to_string(item.task)))
        .bind(5, std::string(qa::to_string(item.status)))
        .bind(6, std::int64_t{item.cycle})
        .bind(7, qa::to_json(item).dump())
        .run();
  } else {
    Stmt(db_,
         "UPDATE items SET status = ?2, cycle = ?3, body = ?4, lease_reviewer = NULL, lease_expiry = NULL"
         " WHERE qa_id = ?1")
        .bind(1, item.qa_id)
        .bind(2, std::string(qa::to_string(item.status)))
        .bind(3, std::int64_t{item.cycle})
        .bind(4, qa::to_json(item).dump())
        .run();
  }
}

std::size_t ReviewStore::enqueue(const std::vector<QaItem>& items) {
  std::lock_guard lock(mu_);
  for (const auto& item : items) {
    if (item.qa_id.empty()) throw Error(ErrorKind::kValidation, "item without qa_id");
    if (item.status != QaStatus::kPending && item.status != QaStatus::kManualCorrection) {
      throw Error(ErrorKind::kValidation, item.qa_id + ": only pending or manual_correction items can be enqueued");
    }
    if (item.cycle < 0 || item.cycle > qa::kMaxCycle) {
      throw Error(ErrorKind::kValidation, item.qa_id + ": cycle out of range");
    }
  }
  Tx tx(*this);
  const std::int64_t ts = now();
  std::size_t changed = 0;
  std::vector<std::string> conflicts;
  for (const auto& item : items) {
    const auto existing = load_item(item.qa_id);
    if (!existing) {
      write_item(item, true);
      append_event(item.qa_id, {"enqueued", "annotator", "", std::nullopt, item.status, item.cycle, ts});
      ++changed;
      continue;
    }
    if (content_key(*existing) == content_key(item)) continue;
    if (existing->status == QaStatus::kRejected && item.cycle == existing->cycle + 1) {
      write_item(item, true);
      append_event(item.qa_id, {"regenerated", "annotator", "", std::nullopt, item.status, item.cycle, ts});
      ++changed;
      continue;
    }
    conflicts.push_back(item.qa_id);
  }
  if (!conflicts.empty()) {
    throw Error(ErrorKind::kConflict, "qa_id already stored with different content", conflicts);
  }
  tx.commit();
  return changed;
}

void ReviewStore::put_context(const aligner::StructuredContext& context) {
  std::lock_guard lock(mu_);
  Stmt(db_, "INSERT INTO contexts(video_id, body) VALUES(?1, ?2) ON CONFLICT(video_id) DO UPDATE SET body = ?2")
      .bind(1, context.video_id)
      .bind(2, aligner::context_to_json(context))
      .run();
}

std::optional<aligner::StructuredContext> ReviewStore::context(const std::string& video_id) const {
  std::lock_guard lock(mu_);
  Stmt st(db_, "SELECT body FROM contexts WHERE video_id = ?");
  st.bind(1, video_id);
  if (!st.step()) return std::nullopt;
  return aligner::context_from_json(st.text(0));
}

std::optional<LeasedItem> ReviewStore::next_pending(const std::string& reviewer_id) {
  if (reviewer_id.empty()) throw Error(ErrorKind::kValidation, "reviewer id is required");
  std::lock_guard lock(mu_);
  Tx tx(*this);
  const std::int64_t t = now();
  std::optional<std::string> qa_id;
  std::int64_t expiry = 0;
  {
    Stmt held(db_,
              "SELECT qa_id, lease_expiry FROM items WHERE status = 'pending' AND lease_reviewer = ?1"
              " AND lease_expiry > ?2 ORDER BY seq LIMIT 1");
    held.bind(1, reviewer_id).bind(2, t);
    if (held.step()) {
      qa_id = held.text(0);
      expiry = held.int64(1);
    }
  }
  if (!qa_id) {
    Stmt free(db_,
              "SELECT qa_id FROM items WHERE status = 'pending' AND (lease_reviewer IS NULL OR lease_expiry <= ?1)"
              " ORDER BY seq LIMIT 1");
    free.bind(1, t);
    if (!free.step()) return std::nullopt;
    qa_id = free.text(0);
    expiry = t + options_.lease_ttl.count();
    Stmt(db_, "UPDATE items SET lease_reviewer = ?2, lease_expiry = ?3 WHERE qa_id = ?1")
        .bind(1, *qa_id)
        .bind(2, reviewer_id)
        .bind(3, expiry)
        .run();
  }
  tx.commit();

  LeasedItem out;
  out.item = *load_item(*qa_id);
  out.lease_expiry_ms = expiry;
  out.rendered_evidence = qa::render_evidence(out.item.evidence);
  if (auto ctx = context(out.item.video_id)) {
    out.rendered_context = aligner::render_context(*ctx);
    out.metadata = ctx->metadata;
  }
  return out;
}

QaStatus ReviewStore::submit_verdict(ReviewVerdict verdict) {
  validate_verdict(verdict);
  std::lock_guard lock(mu_);
  Tx tx(*this);
  const std::int64_t t = now();
  if (verdict.timestamp_ms == 0) verdict.timestamp_ms = t;

  Stmt st(db_, "SELECT body, lease_reviewer, lease_expiry FROM items WHERE qa_id = ?");
  st.bind(1, verdict.qa_id);
  if (!st.step()) throw Error(ErrorKind::kState, "unknown qa_id " + verdict.qa_id, {verdict.qa_id});
  QaItem item = qa::qa_from_json(json::parse(st.text(0)));
  if (item.status != QaStatus::kPending) {
    throw Error(ErrorKind::kState,
                verdict.qa_id + " is " + std::string(qa::to_string(item.status)) + ", not pending", {verdict.qa_id});
  }
  if (st.is_null(1) || st.text(1) != verdict.reviewer_id || st.int64(2) <= t) {
    throw Error(ErrorKind::kState, verdict.qa_id + " is not leased by " + verdict.reviewer_id, {verdict.qa_id});
  }
  if (verdict.decision == Decision::kAccept && item.task == qa::TaskKind::kCM) {
    const auto gap = annotator::check_cross_modal_gap(item);
    if (!gap.pass) throw Error(ErrorKind::kValidation, verdict.qa_id + " fails the cross-modal gap check", gap.reasons);
  }
  qa::apply_verdict(item, verdict.decision == Decision::kAccept);
  item.flags.clear();
  if (verdict.decision == Decision::kReject) item.flags.push_back("review: " + verdict.reason);
  write_item(item, false);
  append_event(item.qa_id,
               {"verdict", verdict.reviewer_id, verdict.reason, verdict, item.status, item.cycle, verdict.timestamp_ms});
  tx.commit();
  return item.status;
}

std::vector<QaItem> ReviewStore::awaiting_regeneration() const {
  std::lock_guard lock(mu_);
  std::vector<QaItem> out;
  Stmt st(db_, "SELECT body FROM items WHERE status = 'rejected' AND cycle < ?1 ORDER BY seq");
  st.bind(1, std::int64_t{qa::kMaxCycle});
  while (st.step()) out.push_back(qa::qa_from_json(json::parse(st.text(0))));
  return out;
}

std::string ReviewStore::accepted_jsonl(std::size_t* count) const {
  std::lock_guard lock(mu_);
  std::string out;
  std::size_t n = 0;
  Stmt st(db_, "SELECT body FROM items WHERE status = 'accepted' ORDER BY video_id, qa_id");
  while (st.step()) {
    out += qa::to_json(qa::qa_from_json(json::parse(st.text(0)))).dump() + "\n";
    ++n;
  }
  if (count) *count = n;
  return out;
}

std::size_t ReviewStore::export_accepted(const std::filesystem::path& destination) const {
  std::size_t n = 0;
  const std::string body = accepted_jsonl(&n);
  std::ofstream out(destination, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kStorage, "cannot write " + destination.string(), {destination.string()});
  out << body;
  out.flush();
  if (!out) throw Error(ErrorKind::kStorage, "write failed for " + destination.string(), {destination.string()});
  return n;
}

Stats ReviewStore::stats() const {
  std::lock_guard lock(mu_);
  Stats s;
  const std::int64_t t = now();
  Stmt st(db_, "SELECT status, task, cycle, lease_reviewer, lease_expiry FROM items");
  while (st.step()) {
    ++s.total;
    ++s.by_status[st.text(0)];
    ++s.by_task[st.text(1)];
    ++s.by_cycle[static_cast<int>(st.int64(2))];
    if (st.text(0) == "pending" && !st.is_null(3) && st.int64(4) > t) ++s.leased;
  }
  return s;
}

std::optional<ItemRecord> ReviewStore::item(const std::string& qa_id) const {
  std::lock_guard lock(mu_);
  Stmt st(db_, "SELECT body, lease_reviewer, lease_expiry FROM items WHERE qa_id = ?");
  st.bind(1, qa_id);
  if (!st.step()) return std::nullopt;
  ItemRecord rec;
  rec.item = qa::qa_from_json(json::parse(st.text(0)));
  if (!st.is_null(1) && st.int64(2) > now()) {
    rec.lease_reviewer = st.text(1);
    rec.lease_expiry_ms = st.int64(2);
  }
  Stmt ev(db_, "SELECT body FROM events WHERE qa_id = ? ORDER BY id");
  ev.bind(1, qa_id);
  while (ev.step()) rec.history.push_back(event_from_json(json::parse(ev.text(0))));
  return rec;
}

std::vector<QaItem> ReviewStore::all_items() const {
  std::lock_guard lock(mu_);
  std::vector<QaItem> out;
  Stmt st(db_, "SELECT body FROM items ORDER BY seq");
  while (st.step()) out.push_back(qa::qa_from_json(json::parse(st.text(0))));
  return out;
}

QaStatus ReviewStore::reopen(const std::string& qa_id, const std::string& auditor_id, const std::string& reason) {
  if (auditor_id.empty()) throw Error(ErrorKind::kValidation, "auditor id is required");
  if (reason.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw Error(ErrorKind::kValidation, "reopen requires a reason");
  }
  std::lock_guard lock(mu_);
  Tx tx(*this);
  auto item = load_item(qa_id);
  if (!item) throw Error(ErrorKind::kState, "unknown qa_id " + qa_id, {qa_id});
  if (item->status != QaStatus::kAccepted && item->status != QaStatus::kManualCorrection) {
    throw Error(ErrorKind::kState, qa_id + " is " + std::string(qa::to_string(item->status)) + ", not terminal", {qa_id});
  }
  item->status = QaStatus::kPending;
  item->flags = {"audit: " + reason};
  write_item(*item, true);
  append_event(qa_id, {"reopened", auditor_id, reason, std::nullopt, item->status, item->cycle, now()});
  tx.commit();
  return item->status;
}

}  // namespace evads::review
