#include "evads/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evads/error.hpp"

namespace evads {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr char kEmbeddingMagic[4] = {'E', 'V', 'E', 'M'};

std::ifstream open_input(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw Error(ErrorKind::kArtifactMissing, "cannot open " + path.string(), {path.string()});
  return in;
}

const std::set<std::string>& record_fields() {
  static const std::set<std::string> fields = {"video_id", "duration_s", "category", "metadata",
                                               "embedding_ref", "asr_ref", "ocr_ref"};
  return fields;
}

std::optional<std::string> optional_ref(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw std::invalid_argument(std::string(key) + " must be a string");
  if (it->get_ref<const std::string&>().empty()) throw std::invalid_argument(std::string(key) + " is empty");
  return it->get<std::string>();
}

VideoRecord record_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("record is not an object");
  for (const auto& [key, _] : j.items()) {
    if (!record_fields().count(key)) throw std::invalid_argument("unknown field '" + key + "'");
  }
  VideoRecord r;
  if (!j.contains("video_id") || !j["video_id"].is_string()) throw std::invalid_argument("video_id missing or not a string");
  r.video_id = j["video_id"].get<std::string>();
  if (!j.contains("duration_s") || !j["duration_s"].is_number()) throw std::invalid_argument("duration_s missing or not a number");
  r.duration_s = j["duration_s"].get<double>();
  if (j.contains("category") && !j["category"].is_null()) {
    if (!j["category"].is_string()) throw std::invalid_argument("category must be a string");
    r.category = j["category"].get<std::string>();
  }
  if (j.contains("metadata") && !j["metadata"].is_null()) {
    if (!j["metadata"].is_object()) throw std::invalid_argument("metadata must be an object");
    for (const auto& [k, v] : j["metadata"].items()) {
      if (!v.is_string()) throw std::invalid_argument("metadata value for '" + k + "' must be a string");
      r.metadata[k] = v.get<std::string>();
    }
  }
  r.embedding_ref = optional_ref(j, "embedding_ref");
  r.asr_ref = optional_ref(j, "asr_ref");
  r.ocr_ref = optional_ref(j, "ocr_ref");
  return r;
}

json record_to_json(const VideoRecord& r) {
  json j = json::object();
  j["video_id"] = r.video_id;
  j["duration_s"] = r.duration_s;
  j["category"] = r.category;
  j["metadata"] = r.metadata;
  if (r.embedding_ref) j["embedding_ref"] = *r.embedding_ref;
  if (r.asr_ref) j["asr_ref"] = *r.asr_ref;
  if (r.ocr_ref) j["ocr_ref"] = *r.ocr_ref;
  return j;
}

bool is_blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

template <typename Fn>
void for_each_json_line(std::istream& in, const std::string& source, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no, source);
    }
    fn(j, line_no);
  }
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
  }
  return v;
}

}  // namespace

std::int64_t VideoRecord::duration_ms() const { return std::llround(duration_s * 1000.0); }

int VideoRecord::duration_seconds_ceil() const {
  return static_cast<int>((duration_ms() + 999) / 1000);
}

const VideoRecord* Manifest::find(const std::string& video_id) const {
  for (const auto& r : records) {
    if (r.video_id == video_id) return &r;
  }
  return nullptr;
}

void validate_record(const VideoRecord& record) {
  if (record.video_id.empty()) throw Error(ErrorKind::kValidation, "empty video_id");
  if (!std::isfinite(record.duration_s) || record.duration_s <= 0.0 || record.duration_ms() <= 0) {
    throw Error(ErrorKind::kValidation, "record '" + record.video_id + "': duration_s must be > 0",
                {record.video_id});
  }
}

void validate_embeddings(const FrameEmbeddingSequence& seq) {
  if (seq.vectors.empty()) throw Error(ErrorKind::kIngest, "embedding sequence has no frames");
  if (seq.dim == 0) throw Error(ErrorKind::kShape, "embedding dimension must be >= 1");
  for (std::size_t t = 0; t < seq.vectors.size(); ++t) {
    const auto& v = seq.vectors[t];
    if (v.size() != seq.dim) {
      throw Error(ErrorKind::kShape, "frame " + std::to_string(t) + " has dimension " + std::to_string(v.size()) +
                                         ", expected " + std::to_string(seq.dim));
    }
    bool nonzero = false;
    for (float x : v) {
      if (!std::isfinite(x)) throw Error(ErrorKind::kIngest, "frame " + std::to_string(t) + " has a non-finite value");
      if (x != 0.0f) nonzero = true;
    }
    if (!nonzero) throw Error(ErrorKind::kIngest, "frame " + std::to_string(t) + " is an all-zero vector");
  }
}

void validate_asr(const std::vector<AsrSegment>& segments, const VideoRecord& record) {
  double previous_start = 0.0;
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const auto& s = segments[k];
    const std::string where = record.video_id + " asr segment " + std::to_string(k);
    if (!(s.start_s >= 0.0)) throw Error(ErrorKind::kValidation, where + ": start_s must be >= 0");
    if (!(s.end_s > s.start_s)) throw Error(ErrorKind::kValidation, where + ": end_s must exceed start_s");
    if (s.end_s > record.duration_s + 1.0) {
      throw Error(ErrorKind::kValidation, where + ": end_s exceeds duration + 1s");
    }
    if (k > 0 && s.start_s < previous_start) {
      throw Error(ErrorKind::kValidation, where + ": segments not sorted by start_s");
    }
    previous_start = s.start_s;
  }
}

void validate_ocr(const std::vector<OcrRecord>& records, const VideoRecord& record) {
  const int limit = record.duration_seconds_ceil();
  for (const auto& r : records) {
    if (r.second_index < 0 || r.second_index >= limit) {
      throw Error(ErrorKind::kValidation, record.video_id + ": OCR second_index " + std::to_string(r.second_index) +
                                              " outside [0, " + std::to_string(limit) + ")");
    }
  }
}

Manifest parse_manifest(std::istream& in, const std::string& source_name) {
  Manifest m;
  bool seen_record = false;
  std::map<std::string, std::size_t> first_line;
  std::vector<std::string> duplicates;
  for_each_json_line(in, source_name, [&](const json& j, std::size_t line_no) {
    if (!seen_record && j.is_object() && j.contains("schema_version") && !j.contains("video_id")) {
      if (!j["schema_version"].is_number_integer()) {
        throw ParseError("schema_version must be an integer", line_no, source_name);
      }
      m.schema_version = j["schema_version"].get<int>();
      if (m.schema_version != kManifestSchemaVersion) {
        throw Error(ErrorKind::kVersion, "unsupported manifest schema_version " + std::to_string(m.schema_version) +
                                             " (supported: " + std::to_string(kManifestSchemaVersion) + ")");
      }
      return;
    }
    seen_record = true;
    VideoRecord r;
    try {
      r = record_from_json(j);
    } catch (const std::exception& e) {
      throw ParseError(std::string("record ") + std::to_string(m.records.size()) + ": " + e.what(), line_no,
                       source_name);
    }
    try {
      validate_record(r);
    } catch (const Error& e) {
      throw Error(ErrorKind::kValidation,
                  source_name + ":" + std::to_string(line_no) + ": " + e.what(), e.details());
    }
    auto [it, inserted] = first_line.emplace(r.video_id, line_no);
    if (!inserted && std::find(duplicates.begin(), duplicates.end(), r.video_id) == duplicates.end()) {
      duplicates.push_back(r.video_id);
    }
    m.records.push_back(std::move(r));
  });
  if (!duplicates.empty()) {
    std::string names;
    for (const auto& d : duplicates) names += (names.empty() ? "" : ", ") + d;
    throw Error(ErrorKind::kDuplicateId, "duplicate video_id: " + names, duplicates);
  }
  return m;
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kArtifactMissing, "cannot open manifest " + path.string(), {path.string()});
  Manifest m = parse_manifest(in, path.string());
  m.base_dir = path.parent_path();
  return m;
}

void write_manifest(std::ostream& out, const Manifest& manifest) {
  out << json{{"schema_version", manifest.schema_version}}.dump() << '\n';
  for (const auto& r : manifest.records) out << record_to_json(r).dump() << '\n';
}

void save_manifest(const fs::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kStorage, "cannot write " + path.string());
  write_manifest(out, manifest);
  if (!out) throw Error(ErrorKind::kStorage, "write failed for " + path.string());
}

fs::path resolve_ref(const Manifest& manifest, const std::string& ref) {
  fs::path p(ref);
  if (p.is_relative() && !manifest.base_dir.empty()) return manifest.base_dir / p;
  return p;
}

std::vector<AsrSegment> read_asr(const fs::path& path) {
  auto in = open_input(path);
  std::vector<AsrSegment> out;
  for_each_json_line(in, path.string(), [&](const json& j, std::size_t line_no) {
    try {
      AsrSegment s;
      s.start_s = j.at("start_s").get<double>();
      s.end_s = j.at("end_s").get<double>();
      s.text = j.at("text").get<std::string>();
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad ASR segment: ") + e.what(), line_no, path.string());
    }
  });
  return out;
}

std::vector<OcrRecord> read_ocr(const fs::path& path) {
  auto in = open_input(path);
  std::vector<OcrRecord> out;
  for_each_json_line(in, path.string(), [&](const json& j, std::size_t line_no) {
    try {
      OcrRecord r;
      r.second_index = j.at("second_index").get<int>();
      r.texts = j.at("texts").get<std::vector<std::string>>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad OCR record: ") + e.what(), line_no, path.string());
    }
  });
  return out;
}

void write_asr(const fs::path& path, const std::vector<AsrSegment>& segments) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kStorage, "cannot write " + path.string());
  for (const auto& s : segments) {
    out << json{{"start_s", s.start_s}, {"end_s", s.end_s}, {"text", s.text}}.dump() << '\n';
  }
}

void write_ocr(const fs::path& path, const std::vector<OcrRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kStorage, "cannot write " + path.string());
  for (const auto& r : records) {
    out << json{{"second_index", r.second_index}, {"texts", r.texts}}.dump() << '\n';
  }
}

FrameEmbeddingSequence read_embeddings(const fs::path& path, const std::string& video_id) {
  auto in = open_input(path, std::ios::binary);
  char magic[4];
  std::uint32_t header[2];
  if (!in.read(magic, 4) || std::memcmp(magic, kEmbeddingMagic, 4) != 0) {
    throw ParseError("bad embedding magic (expected EVEM)", 0, path.string());
  }
  if (!in.read(reinterpret_cast<char*>(header), sizeof header)) {
    throw ParseError("truncated embedding header", 0, path.string());
  }
  const std::uint32_t frames = to_le(header[0]);
  const std::uint32_t dim = to_le(header[1]);
  FrameEmbeddingSequence seq;
  seq.video_id = video_id;
  seq.dim = dim;
  seq.vectors.assign(frames, std::vector<float>(dim));
  for (auto& v : seq.vectors) {
    for (auto& x : v) {
      std::uint32_t bits;
      if (!in.read(reinterpret_cast<char*>(&bits), 4)) {
        throw ParseError("truncated embedding payload", 0, path.string());
      }
      x = std::bit_cast<float>(to_le(bits));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ParseError("trailing bytes after embedding payload", 0, path.string());
  }

  fs::path sidecar = path;
  sidecar += ".json";
  if (fs::exists(sidecar)) {
    std::ifstream sc(sidecar);
    json meta;
    try {
      meta = json::parse(sc);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed sidecar: ") + e.what(), 0, sidecar.string());
    }
    if (meta.value("frames", frames) != frames || meta.value("dim", dim) != dim) {
      throw Error(ErrorKind::kShape, "sidecar " + sidecar.string() + " disagrees with binary header");
    }
    if (meta.value("fps", 1) != FrameEmbeddingSequence::kFps) {
      throw Error(ErrorKind::kValidation, "embeddings must be sampled at 1 fps");
    }
    const std::string sidecar_id = meta.value("video_id", std::string{});
    if (!video_id.empty() && !sidecar_id.empty() && sidecar_id != video_id) {
      throw Error(ErrorKind::kValidation, "sidecar video_id '" + sidecar_id + "' does not match '" + video_id + "'");
    }
    if (seq.video_id.empty()) seq.video_id = sidecar_id;
  }
  return seq;
}

void write_embeddings(const fs::path& path, const FrameEmbeddingSequence& seq, bool with_sidecar) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kStorage, "cannot write " + path.string());
  out.write(kEmbeddingMagic, 4);
  const std::uint32_t header[2] = {to_le(static_cast<std::uint32_t>(seq.vectors.size())),
                                   to_le(static_cast<std::uint32_t>(seq.dim))};
  out.write(reinterpret_cast<const char*>(header), sizeof header);
  for (const auto& v : seq.vectors) {
    if (v.size() != seq.dim) throw Error(ErrorKind::kShape, "ragged embedding sequence");
    for (float x : v) {
      const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(x));
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
  if (!out) throw Error(ErrorKind::kStorage, "write failed for " + path.string());
  if (with_sidecar) {
    fs::path sidecar = path;
    sidecar += ".json";
    std::ofstream sc(sidecar, std::ios::binary);
    sc << json{{"video_id", seq.video_id}, {"fps", FrameEmbeddingSequence::kFps}, {"frames", seq.vectors.size()},
               {"dim", seq.dim}, {"dtype", "f32le"}}
              .dump()
       << '\n';
  }
}

Artifacts load_artifacts(const VideoRecord& record, const fs::path& base_dir) {
  validate_record(record);
  auto resolve = [&](const std::string& ref) {
    fs::path p(ref);
    return (p.is_relative() && !base_dir.empty()) ? base_dir / p : p;
  };
  auto require_exists = [&](const fs::path& p, const char* what) {
    if (!fs::exists(p)) {
      throw Error(ErrorKind::kArtifactMissing,
                  record.video_id + ": referenced " + what + " file missing: " + p.string(), {p.string()});
    }
  };
  Artifacts a;
  if (record.embedding_ref) {
    const auto p = resolve(*record.embedding_ref);
    require_exists(p, "embedding");
    auto seq = read_embeddings(p, record.video_id);
    seq.video_id = record.video_id;
    validate_embeddings(seq);
    a.embeddings = std::move(seq);
  }
  if (record.asr_ref) {
    const auto p = resolve(*record.asr_ref);
    require_exists(p, "ASR");
    auto segs = read_asr(p);
    validate_asr(segs, record);
    a.asr = std::move(segs);
  }
  if (record.ocr_ref) {
    const auto p = resolve(*record.ocr_ref);
    require_exists(p, "OCR");
    auto recs = read_ocr(p);
    validate_ocr(recs, record);
    a.ocr = std::move(recs);
  }
  return a;
}

}  // namespace evads
