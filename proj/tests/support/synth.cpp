#include "support/synth.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "evads/text.hpp"

namespace evads::testing {

namespace fs = std::filesystem;
using json = nlohmann::json;

fs::path source_dir() { return EVADS_SOURCE_DIR; }
fs::path prompts_dir() { return source_dir() / "prompts"; }
fs::path fixtures_dir() { return source_dir() / "fixtures"; }

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("evads-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

void write_file(const fs::path& path, const std::string& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << body;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string random_mixed_text(std::mt19937_64& rng, std::size_t n) {
  static const char32_t kPool[] = {U'a', U'b', U'z', U'Q', U'7', U' ', U'.', U'!', U'-', U'猫',
                                   U'咖', U'啡', U'限', U'时', U'价', U'ア', U'한', U'é', U'😀', U'🛒'};
  std::uniform_int_distribution<std::size_t> pick(0, std::size(kPool) - 1);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) text::append_utf8(out, kPool[pick(rng)]);
  return out;
}

SynthVideo make_video(const std::string& id, double duration_s, const std::string& category, std::uint64_t seed) {
  static const std::vector<std::string> kWords = {"serum", "hydrates", "fast",  "only",   "today", "price",
                                                  "限时",  "特价",     "防水", "No.1",   "buy",   "link",
                                                  "soft",  "fabric",   "全新", "glow", "deal", "小时"};
  std::mt19937_64 rng(seed);
  SynthVideo v;
  v.record.video_id = id;
  v.record.duration_s = duration_s;
  v.record.category = category;
  v.record.metadata = {{"title", "Synthetic " + id}, {"category", category}};
  v.record.embedding_ref = "emb/" + id + ".evem";
  v.record.asr_ref = "asr/" + id + ".jsonl";
  v.record.ocr_ref = "ocr/" + id + ".jsonl";

  const int seconds = static_cast<int>(std::ceil(duration_s));
  v.embeddings.video_id = id;
  v.embeddings.dim = 6;
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  for (int t = 0; t < seconds; ++t) {
    std::vector<float> f(6);
    for (auto& x : f) x = gauss(rng);
    f[static_cast<std::size_t>(t % 6)] += 2.5f;
    v.embeddings.vectors.push_back(f);
  }

  std::uniform_int_distribution<int> nwords(3, 7);
  std::uniform_int_distribution<std::size_t> word(0, kWords.size() - 1);
  double t = 0.0;
  while (t < duration_s - 0.5) {
    const double len = std::min(duration_s - t, 1.0 + static_cast<double>(rng() % 25) / 10.0);
    std::string sentence;
    for (int k = nwords(rng); k > 0; --k) sentence += (sentence.empty() ? "" : " ") + kWords[word(rng)];
    v.asr.push_back({t, t + len, sentence});
    t += len + static_cast<double>(rng() % 5) / 10.0;
  }
  for (int s = 0; s < seconds; s += 2) {
    OcrRecord r{s, {kWords[word(rng)] + " " + std::to_string(s), kWords[word(rng)]}};
    r.texts.push_back(r.texts.front());
    v.ocr.push_back(r);
  }
  return v;
}

Manifest write_corpus(const fs::path& dir, const std::vector<SynthVideo>& videos) {
  Manifest m;
  for (const char* sub : {"emb", "asr", "ocr"}) fs::create_directories(dir / sub);
  for (const auto& v : videos) {
    if (v.record.embedding_ref) write_embeddings(dir / *v.record.embedding_ref, v.embeddings);
    if (v.record.asr_ref) write_asr(dir / *v.record.asr_ref, v.asr);
    if (v.record.ocr_ref) write_ocr(dir / *v.record.ocr_ref, v.ocr);
    m.records.push_back(v.record);
  }
  save_manifest(dir / "manifest.jsonl", m);
  return load_manifest(dir / "manifest.jsonl");
}

std::string fence(const json& j) { return "```json\n" + j.dump() + "\n```"; }

std::shared_ptr<backend::ChatBackend> candidate_backend() {
  return std::make_shared<backend::CallbackBackend>("scripted-persona", [](const backend::ChatRequest& req) {
    const std::string persona = req.tags.at("persona");
    return fence({{"candidates",
                   {{{"question", "What does the " + persona + " notice first?"},
                     {"answer", "draft answer"},
                     {"difficulty", 2},
                     {"evidence", json::array()}}}}});
  });
}

namespace {

json grounded_item(const aligner::StructuredContext& ctx, const std::string& task) {
  json evidence = json::array();
  const aligner::TimelineSlot* a_slot = nullptr;
  const aligner::TimelineSlot* o_slot = nullptr;
  for (const auto& s : ctx.slots) {
    if (!a_slot && !text::trim(s.alpha_text).empty()) a_slot = &s;
    if (!o_slot && !text::trim(s.gamma_text).empty()) o_slot = &s;
  }
  if (o_slot) evidence.push_back({{"modality", "O"}, {"t0", o_slot->t_start}, {"t1", o_slot->t_end}, {"excerpt", o_slot->gamma_text}});
  if (a_slot) evidence.push_back({{"modality", "A"}, {"t0", a_slot->t_start}, {"t1", a_slot->t_end}, {"excerpt", a_slot->alpha_text}});
  evidence.push_back({{"modality", "V"}, {"t0", 0}, {"t1", 1}});
  json item = {{"question", "In this video, what text appears on screen first?"},
               {"answer", o_slot ? o_slot->gamma_text : std::string("nothing")},
               {"reasoning", "Read from the cited spans."},
               {"difficulty", "L2"},
               {"evidence", evidence}};
  if (task == "CM") {
    item["question_source"] = o_slot ? "O" : "V";
    item["decisive_modality"] = "A";
  }
  return {{"item", item}};
}

}  // namespace

std::shared_ptr<backend::ChatBackend> grounded_judge(std::map<std::string, aligner::StructuredContext> contexts) {
  auto shared = std::make_shared<const std::map<std::string, aligner::StructuredContext>>(std::move(contexts));
  return std::make_shared<backend::CallbackBackend>("scripted-judge", [shared](const backend::ChatRequest& req) {
    const auto& ctx = shared->at(req.tags.at("video_id"));
    return fence(grounded_item(ctx, req.tags.at("task")));
  });
}

std::shared_ptr<backend::ChatBackend> failing_judge() {
  return std::make_shared<backend::CallbackBackend>("rejecting-judge", [](const backend::ChatRequest&) {
    return fence({{"item", {{"question", "What is shown?"}, {"answer", "a product"}, {"evidence", json::array()}}}});
  });
}

annotator::AnnotationBackends bind_backends(std::shared_ptr<backend::ChatBackend> persona,
                                            std::shared_ptr<backend::ChatBackend> judge, int max_retries) {
  annotator::AnnotationBackends b;
  b.persona.profile.name = persona->name();
  b.persona.profile.endpoint = "mock:scripted";
  b.persona.profile.max_retries = max_retries;
  b.persona.client = std::move(persona);
  b.judge.profile.name = judge->name();
  b.judge.profile.endpoint = "mock:scripted";
  b.judge.profile.max_retries = max_retries;
  b.judge.client = std::move(judge);
  return b;
}

annotator::AnnotatorConfig annotator_config() {
  annotator::AnnotatorConfig c;
  c.prompt_root = prompts_dir();
  return c;
}

}  // namespace evads::testing
