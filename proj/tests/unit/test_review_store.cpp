#include <csignal>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <thread>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "evads/review_store.hpp"
#include "support/expect.hpp"
#include "support/synth.hpp"

using namespace evads;
using namespace evads::review;
using json = nlohmann::json;

namespace {

struct FakeClock {
  std::shared_ptr<std::atomic<std::int64_t>> t = std::make_shared<std::atomic<std::int64_t>>(1'000'000);
  Clock fn() const {
    return [t = t] { return t->load(); };
  }
  void advance(std::int64_t ms) { *t += ms; }
};

QaItem item(const std::string& video, qa::TaskKind task, int cycle = 0) {
  QaItem q;
  q.video_id = video;
  q.task = task;
  q.qa_id = video + ":" + std::string(qa::to_string(task));
  q.question = "What does the badge say?";
  q.answer = "IPX7";
  q.cycle = cycle;
  q.evidence.items = {{qa::Modality::kO, 1, 2, "IPX7"}, {qa::Modality::kA, 2, 3, "waterproof"}};
  q.question_source = qa::Modality::kO;
  q.decisive_modality = qa::Modality::kA;
  return q;
}

ReviewVerdict accept(const std::string& id, const std::string& who) {
  ReviewVerdict v;
  v.qa_id = id;
  v.reviewer_id = who;
  v.decision = Decision::kAccept;
  for (Pillar p : kAllPillars) v.pillars[p] = true;
  return v;
}

ReviewVerdict reject(const std::string& id, const std::string& who, std::string reason = "answer not supported") {
  ReviewVerdict v = accept(id, who);
  v.decision = Decision::kReject;
  v.pillars[Pillar::kTraceability] = false;
  v.reason = std::move(reason);
  return v;
}

StoreOptions opts(const FakeClock& c, std::int64_t ttl_ms = 60'000) {
  return {std::chrono::milliseconds(ttl_ms), c.fn()};
}

}  // namespace

TEST(Verdict, Validation) {
  EXPECT_NO_THROW(validate_verdict(accept("a", "r")));
  EXPECT_NO_THROW(validate_verdict(reject("a", "r")));
  auto v = accept("a", "r");
  v.pillars.erase(Pillar::kCommercialRelevance);
  EXPECT_ERROR_KIND(validate_verdict(v), ErrorKind::kValidation);
  v = reject("a", "r", "  ");
  EXPECT_ERROR_KIND(validate_verdict(v), ErrorKind::kValidation);
  v = reject("a", "r");
  v.pillars[Pillar::kTraceability] = true;
  EXPECT_ERROR_KIND(validate_verdict(v), ErrorKind::kValidation);
  EXPECT_ERROR_KIND(validate_verdict(accept("a", "")), ErrorKind::kValidation);
}

TEST(Verdict, JsonRoundTrip) {
  auto v = reject("v:BP", "ann", "wrong span");
  v.timestamp_ms = 42;
  const auto back = verdict_from_json(to_json(v));
  EXPECT_EQ(back.qa_id, "v:BP");
  EXPECT_EQ(back.decision, Decision::kReject);
  EXPECT_FALSE(back.pillar_passes(Pillar::kTraceability));
  EXPECT_TRUE(back.pillar_passes(Pillar::kAccuracy));
  EXPECT_EQ(back.timestamp_ms, 42);
  EXPECT_ERROR_KIND(verdict_from_json(json{{"qa_id", "x"}, {"decision", "maybe"}}), ErrorKind::kValidation);
  EXPECT_ERROR_KIND(verdict_from_json(json{{"qa_id", "x"}, {"decision", "accept"}, {"pillars", {{"vibes", true}}}}),
                    ErrorKind::kValidation);
}

TEST(Enqueue, InsertIdempotentAndConflict) {
  evads::testing::TempDir dir;
  FakeClock clock;
  ReviewStore s(dir / "r.db", opts(clock));
  const std::vector<QaItem> three = {item("v1", qa::TaskKind::kBP), item("v1", qa::TaskKind::kCM), item("v2", qa::TaskKind::kRC)};
  EXPECT_EQ(s.enqueue(three), 3u);
  EXPECT_EQ(s.enqueue(three), 0u);
  auto changed = item("v1", qa::TaskKind::kBP);
  changed.answer = "IPX8";
  auto fresh = item("v3", qa::TaskKind::kBP);
  EXPECT_ERROR_KIND(s.enqueue({fresh, changed}), ErrorKind::kConflict);
  EXPECT_FALSE(s.item("v3:BP"));  // the whole batch rolled back
  EXPECT_EQ(s.stats().total, 3u);
}

TEST(Enqueue, RejectsNonPendingOrBadCycle) {
  evads::testing::TempDir dir;
  ReviewStore s(dir / "r.db");
  auto q = item("v1", qa::TaskKind::kBP);
  q.status = qa::QaStatus::kAccepted;
  EXPECT_ERROR_KIND(s.enqueue({q}), ErrorKind::kValidation);
  q.status = qa::QaStatus::kPending;
  q.cycle = 4;
  EXPECT_ERROR_KIND(s.enqueue({q}), ErrorKind::kValidation);
  q = item("v1", qa::TaskKind::kBP);
  q.status = qa::QaStatus::kManualCorrection;
  q.cycle = 3;
  EXPECT_EQ(s.enqueue({q}), 1u);
}

TEST(Lease, ExclusiveUntilTtl) {
  evads::testing::TempDir dir;
  FakeClock clock;
  ReviewStore s(dir / "r.db", opts(clock, 1000));
  s.enqueue({item("v1", qa::TaskKind::kBP)});
  const auto a = s.next_pending("alice");
  ASSERT_TRUE(a);
  EXPECT_EQ(a->lease_expiry_ms, 1'001'000);
  EXPECT_FALSE(s.next_pending("bob"));
  EXPECT_EQ(s.next_pending("alice")->item.qa_id, "v1:BP");
  EXPECT_EQ(s.stats().leased, 1u);
  clock.advance(1000);
  const auto b = s.next_pending("bob");
  ASSERT_TRUE(b);
  EXPECT_EQ(b->item.qa_id, "v1:BP");
  EXPECT_ERROR_KIND(s.submit_verdict(accept("v1:BP", "alice")), ErrorKind::kState);
  EXPECT_EQ(s.submit_verdict(accept("v1:BP", "bob")), qa::QaStatus::kAccepted);
  EXPECT_ERROR_KIND(s.next_pending(""), ErrorKind::kValidation);
}

TEST(Lease, OldestFirstAndContextAttached) {
  evads::testing::TempDir dir;
  FakeClock clock;
  ReviewStore s(dir / "r.db", opts(clock));
  aligner::StructuredContext ctx{"v1", {}, {{"category", "outdoor"}}};
  aligner::TimelineSlot slot;
  slot.t_start = 0;
  slot.t_end = 1;
  slot.alpha_text = "hello";
  ctx.slots = {slot};
  s.put_context(ctx);
  s.enqueue({item("v1", qa::TaskKind::kML), item("v1", qa::TaskKind::kBP)});
  const auto a = s.next_pending("a");
  EXPECT_EQ(a->item.qa_id, "v1:ML");
  EXPECT_EQ(a->rendered_context, "[0–1) ASR: hello | OCR: (none)\n");
  EXPECT_EQ(a->metadata.at("category"), "outdoor");
  EXPECT_EQ(a->rendered_evidence, "O [1–2): IPX7\nA [2–3): waterproof\n");
  EXPECT_EQ(s.next_pending("b")->item.qa_id, "v1:BP");
  EXPECT_FALSE(s.next_pending("c"));
  EXPECT_EQ(*s.context("v1"), ctx);
  EXPECT_FALSE(s.context("v9"));
}

TEST(Verdicts, AcceptAndRejectTransitions) {
  evads::testing::TempDir dir;
  FakeClock clock;
  ReviewStore s(dir / "r.db", opts(clock));
  s.enqueue({item("v1", qa::TaskKind::kBP), item("v1", qa::TaskKind::kRC)});
  s.next_pending("r");
  EXPECT_EQ(s.submit_verdict(accept("v1:BP", "r")), qa::QaStatus::kAccepted);
  s.next_pending("r");
  EXPECT_EQ(s.submit_verdict(reject("v1:RC", "r", "wrong timestamp")), qa::QaStatus::kRejected);
  const auto rec = s.item("v1:RC");
  EXPECT_EQ(rec->item.flags, std::vector<std::string>{"review: wrong timestamp"});
  EXPECT_FALSE(rec->lease_reviewer);
  EXPECT_EQ(s.awaiting_regeneration().size(), 1u);
  EXPECT_ERROR_KIND(s.submit_verdict(accept("v1:BP", "r")), ErrorKind::kState);
  EXPECT_ERROR_KIND(s.submit_verdict(accept("nope", "r")), ErrorKind::kState);
  const auto st = s.stats();
  EXPECT_EQ(st.by_status.at("accepted"), 1u);
  EXPECT_EQ(st.by_status.at("rejected"), 1u);
}

TEST(Verdicts, CmAcceptRequiresGap) {
  evads::testing::TempDir dir;
  ReviewStore s(dir / "r.db");
  auto q = item("v1", qa::TaskKind::kCM);
  q.evidence.items = {{qa::Modality::kO, 1, 2, "IPX7"}};
  s.enqueue({q});
  s.next_pending("r");
  EXPECT_ERROR_KIND(s.submit_verdict(accept("v1:CM", "r")), ErrorKind::kValidation);
  EXPECT_EQ(s.item("v1:CM")->item.status, qa::QaStatus::kPending);
  EXPECT_EQ(s.submit_verdict(reject("v1:CM", "r", "single modality")), qa::QaStatus::kRejected);
}

TEST(Verdicts, ThreeRegenerationsThenManualCorrection) {
  evads::testing::TempDir dir;
  FakeClock clock;
  ReviewStore s(dir / "r.db", opts(clock));
  s.enqueue({item("v1", qa::TaskKind::kBP)});
  for (int cycle = 0; cycle <= qa::kMaxCycle; ++cycle) {
    ASSERT_TRUE(s.next_pending("r"));
    const auto status = s.submit_verdict(reject("v1:BP", "r"));
    if (cycle < qa::kMaxCycle) {
      ASSERT_EQ(status, qa::QaStatus::kRejected);
      auto pending = s.awaiting_regeneration();
      ASSERT_EQ(pending.size(), 1u);
      auto regen = item("v1", qa::TaskKind::kBP, pending[0].cycle + 1);
      regen.answer = "attempt " + std::to_string(cycle + 1);
      EXPECT_EQ(s.enqueue({regen}), 1u);
    } else {
      EXPECT_EQ(status, qa::QaStatus::kManualCorrection);
    }
  }
  EXPECT_TRUE(s.awaiting_regeneration().empty());
  const auto rec = s.item("v1:BP");
  EXPECT_EQ(rec->item.cycle, 3);
  int regenerated = 0;
  for (const auto& e : rec->history) regenerated += e.kind == "regenerated";
  EXPECT_EQ(regenerated, 3);
  EXPECT_EQ(rec->history.size(), 1u + 4u + 3u);
}

TEST(Verdicts, RegenerationMustBeNextCycle) {
  evads::testing::TempDir dir;
  ReviewStore s(dir / "r.db");
  s.enqueue({item("v1", qa::TaskKind::kBP)});
  s.next_pending("r");
  s.submit_verdict(reject("v1:BP", "r"));
  auto skip = item("v1", qa::TaskKind::kBP, 2);
  EXPECT_ERROR_KIND(s.enqueue({skip}), ErrorKind::kConflict);
}

TEST(History, AppendOnlyAndOrdered) {
  evads::testing::TempDir dir;
  FakeClock clock;
  ReviewStore s(dir / "r.db", opts(clock));
  s.enqueue({item("v1", qa::TaskKind::kBP)});
  clock.advance(5);
  s.next_pending("r");
  s.submit_verdict(accept("v1:BP", "r"));
  const auto h1 = s.item("v1:BP")->history;
  clock.advance(5);
  s.reopen("v1:BP", "auditor", "price misread");
  const auto h2 = s.item("v1:BP")->history;
  ASSERT_EQ(h1.size(), 2u);
  ASSERT_EQ(h2.size(), 3u);
  for (std::size_t i = 0; i < h1.size(); ++i) EXPECT_EQ(to_json(h1[i]), to_json(h2[i]));
  EXPECT_EQ(h2[0].kind, "enqueued");
  EXPECT_EQ(h2[1].kind, "verdict");
  EXPECT_EQ(h2[1].timestamp_ms, 1'000'005);
  EXPECT_EQ(h2[1].verdict->reviewer_id, "r");
  EXPECT_EQ(h2[2].kind, "reopened");
  EXPECT_EQ(h2[2].actor, "auditor");
}

TEST(Reopen, OnlyTerminalItemsKeepCycle) {
  evads::testing::TempDir dir;
  ReviewStore s(dir / "r.db");
  auto manual = item("v1", qa::TaskKind::kBP, 3);
  manual.status = qa::QaStatus::kManualCorrection;
  s.enqueue({manual, item("v1", qa::TaskKind::kRC)});
  EXPECT_EQ(s.reopen("v1:BP", "aud", "fixed by hand"), qa::QaStatus::kPending);
  EXPECT_EQ(s.item("v1:BP")->item.cycle, 3);
  EXPECT_EQ(s.item("v1:BP")->item.flags, std::vector<std::string>{"audit: fixed by hand"});
  EXPECT_ERROR_KIND(s.reopen("v1:RC", "aud", "x"), ErrorKind::kState);
  EXPECT_ERROR_KIND(s.reopen("v1:BP", "aud", " "), ErrorKind::kValidation);
  EXPECT_ERROR_KIND(s.reopen("zz", "aud", "x"), ErrorKind::kState);
}

TEST(Export, SortedAndDeterministic) {
  evads::testing::TempDir dir;
  ReviewStore s(dir / "r.db");
  s.enqueue({item("v2", qa::TaskKind::kBP), item("v1", qa::TaskKind::kRC), item("v1", qa::TaskKind::kBP)});
  for (int k = 0; k < 3; ++k) {
    const auto l = s.next_pending("r");
    s.submit_verdict(accept(l->item.qa_id, "r"));
  }
  std::size_t n = 0;
  const std::string body = s.accepted_jsonl(&n);
  EXPECT_EQ(n, 3u);
  EXPECT_LT(body.find("\"v1:BP\""), body.find("\"v1:RC\""));
  EXPECT_LT(body.find("\"v1:RC\""), body.find("\"v2:BP\""));
  EXPECT_EQ(s.export_accepted(dir / "a.jsonl"), 3u);
  EXPECT_EQ(s.export_accepted(dir / "b.jsonl"), 3u);
  EXPECT_EQ(evads::testing::read_file(dir / "a.jsonl"), evads::testing::read_file(dir / "b.jsonl"));
  EXPECT_EQ(evads::testing::read_file(dir / "a.jsonl"), body);
  EXPECT_EQ(qa::read_qa_items(dir / "a.jsonl").size(), 3u);
  EXPECT_ERROR_KIND(s.export_accepted(dir / "missing" / "x.jsonl"), ErrorKind::kStorage);
}

TEST(Durability, SurvivesReopen) {
  evads::testing::TempDir dir;
  {
    ReviewStore s(dir / "r.db");
    s.enqueue({item("v1", qa::TaskKind::kBP), item("v1", qa::TaskKind::kML)});
    s.next_pending("r");
    s.submit_verdict(accept("v1:BP", "r"));
  }
  ReviewStore s(dir / "r.db");
  EXPECT_EQ(s.item("v1:BP")->item.status, qa::QaStatus::kAccepted);
  EXPECT_EQ(s.stats().total, 2u);
  EXPECT_EQ(s.next_pending("x")->item.qa_id, "v1:ML");
}

TEST(Durability, ConsistentAfterSigkill) {
  evads::testing::TempDir dir;
  const auto db = dir / "crash.db";
  {
    ReviewStore s(db);
    std::vector<QaItem> items;
    for (int k = 0; k < 400; ++k) items.push_back(item("v" + std::to_string(k), qa::TaskKind::kBP));
    s.enqueue(items);
  }
  const pid_t pid = fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    try {
      ReviewStore s(db);
      for (int k = 0;; ++k) {
        const auto l = s.next_pending("child");
        if (!l) break;
        if (k % 2 == 0) {
          s.submit_verdict(accept(l->item.qa_id, "child"));
        } else {
          s.submit_verdict(reject(l->item.qa_id, "child"));
        }
      }
    } catch (...) {
      _exit(3);
    }
    _exit(0);
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(150));
  kill(pid, SIGKILL);
  int status = 0;
  waitpid(pid, &status, 0);

  ReviewStore s(db);
  std::size_t decided = 0;
  for (const auto& q : s.all_items()) {
    const auto rec = s.item(q.qa_id);
    ASSERT_FALSE(rec->history.empty());
    EXPECT_EQ(rec->history.back().status_after, q.status) << q.qa_id;
    const std::size_t verdicts = rec->history.size() - 1;
    EXPECT_EQ(verdicts, q.status == qa::QaStatus::kPending ? 0u : 1u) << q.qa_id;
    decided += verdicts;
  }
  const auto st = s.stats();
  EXPECT_EQ(st.total, 400u);
  std::size_t terminal = 0;
  for (const auto& [k, n] : st.by_status) terminal += k == "pending" ? 0 : n;
  EXPECT_EQ(terminal, decided);
  // The store stays usable after the crash.
  EXPECT_NO_THROW(s.enqueue({item("after", qa::TaskKind::kCI)}));
}

TEST(Concurrency, ThreadsNeverShareALease) {
  evads::testing::TempDir dir;
  ReviewStore s(dir / "r.db");
  std::vector<QaItem> items;
  for (int k = 0; k < 40; ++k) items.push_back(item("v" + std::to_string(k), qa::TaskKind::kRC));
  s.enqueue(items);
  std::atomic<int> decided{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      const std::string who = "r" + std::to_string(t);
      while (auto l = s.next_pending(who)) {
        s.submit_verdict(accept(l->item.qa_id, who));
        ++decided;
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(decided.load(), 40);
  EXPECT_EQ(s.stats().by_status.at("accepted"), 40u);
}
