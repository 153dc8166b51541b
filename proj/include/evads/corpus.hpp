#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace evads {

inline constexpr int kManifestSchemaVersion = 1;

/// One corpus entry. Artifact references are paths, resolved against the
/// manifest's directory when relative.
struct VideoRecord {
  std::string video_id;
  double duration_s = 0.0;
  std::string category;
  std::map<std::string, std::string> metadata;
  std::optional<std::string> embedding_ref;
  std::optional<std::string> asr_ref;
  std::optional<std::string> ocr_ref;

  /// Duration rounded to whole milliseconds.
  std::int64_t duration_ms() const;
  /// Number of 1-second timeline slots, ceil(duration_s).
  int duration_seconds_ceil() const;

  friend bool operator==(const VideoRecord&, const VideoRecord&) = default;
};

/// Frame features sampled at a fixed 1 frame per second.
struct FrameEmbeddingSequence {
  static constexpr int kFps = 1;

  std::string video_id;
  std::size_t dim = 0;
  std::vector<std::vector<float>> vectors;

  std::size_t frames() const { return vectors.size(); }
};

struct AsrSegment {
  double start_s = 0.0;
  double end_s = 0.0;
  std::string text;

  friend bool operator==(const AsrSegment&, const AsrSegment&) = default;
};

struct OcrRecord {
  int second_index = 0;
  std::vector<std::string> texts;

  friend bool operator==(const OcrRecord&, const OcrRecord&) = default;
};

struct Manifest {
  int schema_version = kManifestSchemaVersion;
  std::vector<VideoRecord> records;
  /// Directory used to resolve relative artifact references.
  std::filesystem::path base_dir;

  const VideoRecord* find(const std::string& video_id) const;
};

struct Artifacts {
  std::optional<FrameEmbeddingSequence> embeddings;
  std::optional<std::vector<AsrSegment>> asr;
  std::optional<std::vector<OcrRecord>> ocr;
};

/// Checks one record's own invariants (id, duration). Throws Error(kValidation).
void validate_record(const VideoRecord& record);
/// Checks a loaded frame sequence. Throws kShape for ragged dimensions and
/// kIngest for empty or all-zero vectors.
void validate_embeddings(const FrameEmbeddingSequence& seq);
void validate_asr(const std::vector<AsrSegment>& segments, const VideoRecord& record);
void validate_ocr(const std::vector<OcrRecord>& records, const VideoRecord& record);

/// Parses a line-delimited manifest. An optional first line
/// `{"schema_version": N}` declares the format version (default 1).
Manifest parse_manifest(std::istream& in, const std::string& source_name = "<manifest>");
Manifest load_manifest(const std::filesystem::path& path);

/// Canonical serialization: header line, then one record per line with fields
/// in declaration order and absent references omitted.
void write_manifest(std::ostream& out, const Manifest& manifest);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

std::filesystem::path resolve_ref(const Manifest& manifest, const std::string& ref);

Artifacts load_artifacts(const VideoRecord& record, const std::filesystem::path& base_dir = {});

std::vector<AsrSegment> read_asr(const std::filesystem::path& path);
std::vector<OcrRecord> read_ocr(const std::filesystem::path& path);
void write_asr(const std::filesystem::path& path, const std::vector<AsrSegment>& segments);
void write_ocr(const std::filesystem::path& path, const std::vector<OcrRecord>& records);

/// Binary layout: "EVEM", u32 T, u32 D, then T*D little-endian f32.
/// A `<path>.json` sidecar, when present, must agree with the header.
FrameEmbeddingSequence read_embeddings(const std::filesystem::path& path, const std::string& video_id = {});
void write_embeddings(const std::filesystem::path& path, const FrameEmbeddingSequence& seq,
                      bool with_sidecar = true);

}  // namespace evads
