#include "evads/aligner.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "evads/error.hpp"
#include "evads/text.hpp"

namespace evads::aligner {

using json = nlohmann::json;

namespace {

constexpr std::int64_t kMsPerSecond = 1000;

std::int64_t to_ms(double seconds) { return std::llround(seconds * 1000.0); }

}  // namespace

std::vector<AsrChunk> chunk_asr_segment(const AsrSegment& segment, std::optional<int> limit_seconds) {
  const std::int64_t start_ms = to_ms(segment.start_s);
  const std::int64_t end_ms = to_ms(segment.end_s);
  if (start_ms < 0 || end_ms <= start_ms) {
    throw Error(ErrorKind::kDomain, "degenerate ASR span [" + std::to_string(segment.start_s) + ", " +
                                        std::to_string(segment.end_s) + ")");
  }
  if (limit_seconds && *limit_seconds < 1) throw Error(ErrorKind::kDomain, "timeline limit must be >= 1 second");

  const auto offsets = text::codepoint_offsets(segment.text);
  const std::int64_t chars = static_cast<std::int64_t>(offsets.size()) - 1;
  const std::int64_t total = end_ms - start_ms;
  const int first = static_cast<int>(start_ms / kMsPerSecond);
  const int last = static_cast<int>((end_ms - 1) / kMsPerSecond);

  std::vector<AsrChunk> chunks;
  std::int64_t used = 0;
  for (int sec = first; sec <= last; ++sec) {
    const std::int64_t lo = std::max(start_ms, sec * kMsPerSecond);
    const std::int64_t hi = std::min(end_ms, (sec + 1) * kMsPerSecond);
    const std::int64_t quota = sec == last ? chars - used : chars * (hi - lo) / total;
    chunks.push_back({sec, segment.text.substr(offsets[used], offsets[used + quota] - offsets[used])});
    used += quota;
  }

  if (limit_seconds) {
    const int limit = *limit_seconds;
    std::string overflow;
    while (!chunks.empty() && chunks.back().second >= limit) {
      overflow.insert(0, chunks.back().text);
      chunks.pop_back();
    }
    if (!overflow.empty() || chunks.empty()) {
      if (chunks.empty()) chunks.push_back({limit - 1, std::string{}});
      chunks.back().text += overflow;
    }
  }
  return chunks;
}

StructuredContext build_timeline(const VideoRecord& record, const std::optional<FrameEmbeddingSequence>& embeddings,
                                 const std::vector<AsrSegment>& asr, const std::vector<OcrRecord>& ocr) {
  validate_record(record);
  validate_ocr(ocr, record);
  const int seconds = record.duration_seconds_ceil();

  StructuredContext ctx;
  ctx.video_id = record.video_id;
  ctx.metadata = record.metadata;
  ctx.slots.resize(static_cast<std::size_t>(seconds));
  for (int t = 0; t < seconds; ++t) {
    auto& slot = ctx.slots[static_cast<std::size_t>(t)];
    slot.t_start = t;
    slot.t_end = t + 1;
    if (embeddings && static_cast<std::size_t>(t) < embeddings->frames()) slot.frame_refs.push_back(t);
  }

  std::vector<const AsrSegment*> ordered;
  ordered.reserve(asr.size());
  for (const auto& s : asr) ordered.push_back(&s);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const AsrSegment* x, const AsrSegment* y) { return x->start_s < y->start_s; });
  double previous_end = 0.0;
  for (std::size_t k = 0; k < ordered.size(); ++k) {
    const auto& seg = *ordered[k];
    if (k > 0 && seg.start_s < previous_end) {
      spdlog::warn("{}: overlapping ASR segments at {:.3f}s; concatenating in start order", record.video_id,
                   seg.start_s);
    }
    previous_end = std::max(previous_end, seg.end_s);
    for (auto& chunk : chunk_asr_segment(seg, seconds)) {
      ctx.slots[static_cast<std::size_t>(chunk.second)].alpha_text += chunk.text;
    }
  }

  std::vector<std::vector<std::string>> ocr_by_second(static_cast<std::size_t>(seconds));
  for (const auto& r : ocr) {
    auto& bucket = ocr_by_second[static_cast<std::size_t>(r.second_index)];
    for (const auto& t : r.texts) {
      if (t.empty()) continue;
      if (std::find(bucket.begin(), bucket.end(), t) == bucket.end()) bucket.push_back(t);
    }
  }
  for (int t = 0; t < seconds; ++t) {
    std::string joined;
    for (const auto& s : ocr_by_second[static_cast<std::size_t>(t)]) {
      if (!joined.empty()) joined.push_back(' ');
      joined += s;
    }
    ctx.slots[static_cast<std::size_t>(t)].gamma_text = std::move(joined);
  }
  return ctx;
}

StructuredContext merge_slots(const StructuredContext& context) {
  StructuredContext out;
  out.video_id = context.video_id;
  out.metadata = context.metadata;
  for (const auto& slot : context.slots) {
    if (!out.slots.empty()) {
      auto& prev = out.slots.back();
      if (prev.t_end == slot.t_start && prev.alpha_text == slot.alpha_text && prev.gamma_text == slot.gamma_text) {
        prev.t_end = slot.t_end;
        prev.frame_refs.insert(prev.frame_refs.end(), slot.frame_refs.begin(), slot.frame_refs.end());
        continue;
      }
    }
    out.slots.push_back(slot);
  }
  return out;
}

StructuredContext align_record(const VideoRecord& record, const std::filesystem::path& base_dir) {
  const Artifacts a = load_artifacts(record, base_dir);
  return merge_slots(build_timeline(record, a.embeddings, a.asr.value_or(std::vector<AsrSegment>{}),
                                    a.ocr.value_or(std::vector<OcrRecord>{})));
}

std::string render_context(const StructuredContext& context, bool include_asr, bool include_ocr) {
  auto or_none = [](const std::string& s) { return s.empty() ? std::string("(none)") : s; };
  std::string out;
  for (const auto& slot : context.slots) {
    out += "[" + std::to_string(slot.t_start) + "–" + std::to_string(slot.t_end) + ")";
    if (include_asr) out += " ASR: " + or_none(slot.alpha_text);
    if (include_asr && include_ocr) out += " |";
    if (include_ocr) out += " OCR: " + or_none(slot.gamma_text);
    out += "\n";
  }
  return out;
}

std::string render_metadata(const StructuredContext& context) {
  std::string out;
  for (const auto& [k, v] : context.metadata) out += k + ": " + v + "\n";
  return out;
}

std::string channel_text(const StructuredContext& context, char modality, int t0, int t1) {
  std::string out;
  for (const auto& slot : context.slots) {
    if (slot.t_end <= t0 || slot.t_start >= t1) continue;
    if (modality == 'A') {
      out += slot.alpha_text;
    } else if (modality == 'O') {
      if (slot.gamma_text.empty()) continue;
      if (!out.empty()) out.push_back(' ');
      out += slot.gamma_text;
    }
  }
  return out;
}

std::string context_to_json(const StructuredContext& context) {
  json slots = json::array();
  for (const auto& s : context.slots) {
    slots.push_back({{"t_start", s.t_start},
                     {"t_end", s.t_end},
                     {"alpha", s.alpha_text},
                     {"gamma", s.gamma_text},
                     {"frame_refs", s.frame_refs}});
  }
  json j{{"video_id", context.video_id}, {"slots", std::move(slots)}, {"metadata", context.metadata}};
  return j.dump(2) + "\n";
}

StructuredContext context_from_json(const std::string& json_text) {
  try {
    const json j = json::parse(json_text);
    StructuredContext ctx;
    ctx.video_id = j.at("video_id").get<std::string>();
    ctx.metadata = j.value("metadata", std::map<std::string, std::string>{});
    int expected_start = 0;
    for (const auto& s : j.at("slots")) {
      TimelineSlot slot;
      slot.t_start = s.at("t_start").get<int>();
      slot.t_end = s.at("t_end").get<int>();
      slot.alpha_text = s.value("alpha", std::string{});
      slot.gamma_text = s.value("gamma", std::string{});
      slot.frame_refs = s.value("frame_refs", std::vector<int>{});
      if (slot.t_start != expected_start || slot.t_end <= slot.t_start) {
        throw Error(ErrorKind::kValidation, "context slots must be contiguous and ordered");
      }
      expected_start = slot.t_end;
      ctx.slots.push_back(std::move(slot));
    }
    return ctx;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad context JSON: ") + e.what(), 0);
  }
}

void save_context(const std::filesystem::path& path, const StructuredContext& context) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kStorage, "cannot write " + path.string());
  out << context_to_json(context);
}

StructuredContext load_context(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kArtifactMissing, "cannot open " + path.string(), {path.string()});
  std::stringstream ss;
  ss << in.rdbuf();
  return context_from_json(ss.str());
}

}  // namespace evads::aligner
