#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "evads/corpus.hpp"

namespace evads::aligner {

/// A span [t_start, t_end) of whole seconds with its aligned channels.
struct TimelineSlot {
  int t_start = 0;
  int t_end = 1;
  std::vector<int> frame_refs;
  std::string alpha_text;  // ASR text inside the span
  std::string gamma_text;  // de-duplicated OCR text

  friend bool operator==(const TimelineSlot&, const TimelineSlot&) = default;
};

struct StructuredContext {
  std::string video_id;
  std::vector<TimelineSlot> slots;
  std::map<std::string, std::string> metadata;

  /// One past the last covered second.
  int end_second() const { return slots.empty() ? 0 : slots.back().t_end; }

  friend bool operator==(const StructuredContext&, const StructuredContext&) = default;
};

struct AsrChunk {
  int second = 0;
  std::string text;

  friend bool operator==(const AsrChunk&, const AsrChunk&) = default;
};

/// Splits a segment at the integer-second boundaries it crosses. Each covered
/// second gets floor(chars * sub_duration / total_duration) code points and
/// the last covered second absorbs the rest, so the chunks concatenate back to
/// the original text. Timing is evaluated at millisecond precision.
///
/// With `limit_seconds`, seconds at or past the limit are dropped and their
/// text goes to the last second before the limit.
std::vector<AsrChunk> chunk_asr_segment(const AsrSegment& segment, std::optional<int> limit_seconds = std::nullopt);

/// One slot per second of [0, ceil(duration)). Overlapping ASR segments are
/// each chunked on their own span and concatenated in start order (a warning
/// is logged).
StructuredContext build_timeline(const VideoRecord& record, const std::optional<FrameEmbeddingSequence>& embeddings,
                                 const std::vector<AsrSegment>& asr, const std::vector<OcrRecord>& ocr);

/// Collapses maximal runs of adjacent slots with identical channel texts.
StructuredContext merge_slots(const StructuredContext& context);

/// Loads the record's artifacts, builds and merges its timeline.
StructuredContext align_record(const VideoRecord& record, const std::filesystem::path& base_dir);

/// One line per slot: `[t0–t1) ASR: … | OCR: …`, suppressed channels omitted.
std::string render_context(const StructuredContext& context, bool include_asr = true, bool include_ocr = true);
/// `key: value` lines in key order.
std::string render_metadata(const StructuredContext& context);

/// The concatenated channel text over every slot intersecting [t0, t1):
/// ASR is joined without separator, OCR with single spaces.
std::string channel_text(const StructuredContext& context, char modality, int t0, int t1);

std::string context_to_json(const StructuredContext& context);
StructuredContext context_from_json(const std::string& json_text);
void save_context(const std::filesystem::path& path, const StructuredContext& context);
StructuredContext load_context(const std::filesystem::path& path);

}  // namespace evads::aligner
