#include "evads/density.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "evads/error.hpp"
#include "evads/parallel.hpp"
#include "evads/text.hpp"

namespace evads::density {

using json = nlohmann::json;

namespace {

double dot(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += static_cast<double>(a[k]) * b[k];
  return s;
}

// dot / sqrt(|a|^2 |b|^2): identical vectors give exactly 1.
double cosine(const std::vector<float>& a, const std::vector<float>& b, double a_sq, double b_sq) {
  return dot(a, b) / std::sqrt(a_sq * b_sq);
}

// Decay weights indexed by |j - i|, 1..d.
std::vector<double> decay_weights(int d) {
  std::vector<double> w(static_cast<std::size_t>(d) + 1, 0.0);
  for (int k = 1; k <= d; ++k) w[k] = std::exp(-static_cast<double>(k) / (2.0 * d));
  return w;
}

double adjust_cosine(double c, const DensityConfig& cfg) {
  c = std::clamp(c, -1.0, 1.0);
  return cfg.clamp_negative_cosine ? std::max(c, 0.0) : c;
}

std::vector<double> default_v_edges(double alpha) {
  std::vector<double> e;
  for (int k = 0; k <= 10; ++k) e.push_back(alpha * k / 10.0);
  return e;
}

std::vector<double> default_rate_edges() { return {0, 1, 2, 3, 4, 5, 6, 8, 10, 15, 20, 30, 50}; }

MetricSummary summarize(const std::vector<DensityProfile>& profiles, std::optional<double> DensityProfile::*field,
                        std::vector<double> edges) {
  MetricSummary s;
  s.histogram = Histogram::with_edges(std::move(edges));
  double sum = 0.0;
  for (const auto& p : profiles) {
    if (const auto& v = p.*field) {
      sum += *v;
      ++s.n;
      s.histogram.add(*v);
    }
  }
  if (s.n > 0) s.mean = sum / static_cast<double>(s.n);
  return s;
}

json summary_json(const MetricSummary& s) {
  json j;
  j["mean"] = s.mean ? json(*s.mean) : json(nullptr);
  j["n"] = s.n;
  j["histogram"] = {{"edges", s.histogram.edges}, {"counts", s.histogram.counts}};
  return j;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

void DensityConfig::validate() const {
  if (neighborhood_d < 1) throw Error(ErrorKind::kConfig, "neighborhood_d must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw Error(ErrorKind::kConfig, "alpha must be a positive real");
}

Histogram Histogram::with_edges(std::vector<double> edges) {
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end())) {
    throw Error(ErrorKind::kConfig, "histogram needs at least two ascending edges");
  }
  Histogram h;
  h.counts.assign(edges.size() - 1, 0);
  h.edges = std::move(edges);
  return h;
}

void Histogram::add(double value) {
  // Values beyond the last edge land in the final bucket.
  auto it = std::upper_bound(edges.begin(), edges.end(), value);
  std::size_t idx = it == edges.begin() ? 0 : static_cast<std::size_t>(it - edges.begin()) - 1;
  idx = std::min(idx, counts.size() - 1);
  ++counts[idx];
}

double neighborhood_similarity(const FrameEmbeddingSequence& embeddings, const DensityConfig& cfg, std::size_t frame) {
  cfg.validate();
  const std::size_t frames = embeddings.frames();
  if (frame >= frames) {
    throw Error(ErrorKind::kIndex, "frame index " + std::to_string(frame) + " out of range [0, " +
                                       std::to_string(frames) + ")");
  }
  if (frames == 1) return 1.0;
  const auto weights = decay_weights(cfg.neighborhood_d);
  const auto& center = embeddings.vectors[frame];
  const double center_sq = dot(center, center);
  const std::size_t d = static_cast<std::size_t>(cfg.neighborhood_d);
  const std::size_t lo = frame >= d ? frame - d : 0;
  const std::size_t hi = std::min(frames - 1, frame + d);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t j = lo; j <= hi; ++j) {
    if (j == frame) continue;
    const double w = weights[j > frame ? j - frame : frame - j];
    const auto& other = embeddings.vectors[j];
    num += w * adjust_cosine(cosine(center, other, center_sq, dot(other, other)), cfg);
    den += w;
  }
  return num / den;
}

double visual_dynamic_density(const FrameEmbeddingSequence& embeddings, const DensityConfig& cfg) {
  cfg.validate();
  validate_embeddings(embeddings);
  const std::size_t frames = embeddings.frames();
  if (frames == 1) return 0.0;

  const auto& vectors = embeddings.vectors;
  std::vector<double> sq(frames);
  for (std::size_t i = 0; i < frames; ++i) sq[i] = dot(vectors[i], vectors[i]);
  const auto weights = decay_weights(cfg.neighborhood_d);
  const std::size_t d = static_cast<std::size_t>(cfg.neighborhood_d);

  // Each in-band pair contributes symmetrically to both endpoints.
  std::vector<double> num(frames, 0.0);
  std::vector<double> den(frames, 0.0);
  for (std::size_t i = 0; i < frames; ++i) {
    const std::size_t hi = std::min(frames - 1, i + d);
    for (std::size_t j = i + 1; j <= hi; ++j) {
      const double w = weights[j - i];
      const double c = adjust_cosine(cosine(vectors[i], vectors[j], sq[i], sq[j]), cfg);
      num[i] += w * c;
      num[j] += w * c;
      den[i] += w;
      den[j] += w;
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < frames; ++i) total += 1.0 - num[i] / den[i];
  return cfg.alpha * total / static_cast<double>(frames);
}

double text_density(const std::vector<std::string>& text_units, double duration_s) {
  if (!(duration_s > 0.0) || !std::isfinite(duration_s)) {
    throw Error(ErrorKind::kDomain, "duration_s must be > 0");
  }
  std::size_t words = 0;
  for (const auto& u : text_units) words += text::word_count(u);
  return static_cast<double>(words) / duration_s;
}

std::vector<std::string> asr_units(const std::vector<AsrSegment>& segments) {
  std::vector<std::string> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back(s.text);
  return out;
}

std::vector<std::string> ocr_units(const std::vector<OcrRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records) out.insert(out.end(), r.texts.begin(), r.texts.end());
  return out;
}

DensityProfile profile_video(const VideoRecord& record, const Artifacts& artifacts, const DensityConfig& cfg) {
  DensityProfile p;
  p.video_id = record.video_id;
  if (artifacts.embeddings) p.v_den = visual_dynamic_density(*artifacts.embeddings, cfg);
  if (artifacts.asr) p.a_den = text_density(asr_units(*artifacts.asr), record.duration_s);
  if (artifacts.ocr) p.o_den = text_density(ocr_units(*artifacts.ocr), record.duration_s);
  return p;
}

CorpusDensityReport corpus_density_report(const Manifest& manifest, const DensityConfig& cfg, unsigned workers) {
  cfg.validate();
  if (manifest.records.empty()) throw Error(ErrorKind::kEmptyReport, "manifest has no records");
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());

  std::vector<DensityProfile> profiles(manifest.records.size());
  auto work = [&](std::size_t k) {
    const auto& r = manifest.records[k];
    profiles[k] = profile_video(r, load_artifacts(r, manifest.base_dir), cfg);
  };
  parallel_for(profiles.size(), workers, work);
  std::sort(profiles.begin(), profiles.end(),
            [](const DensityProfile& x, const DensityProfile& y) { return x.video_id < y.video_id; });

  CorpusDensityReport report;
  report.config = cfg;
  report.v = summarize(profiles, &DensityProfile::v_den, default_v_edges(cfg.alpha));
  report.a = summarize(profiles, &DensityProfile::a_den, default_rate_edges());
  report.o = summarize(profiles, &DensityProfile::o_den, default_rate_edges());
  report.per_video = std::move(profiles);
  return report;
}

std::string report_to_json(const CorpusDensityReport& report) {
  json j;
  j["config"] = {{"neighborhood_d", report.config.neighborhood_d},
                 {"alpha", report.config.alpha},
                 {"clamp_negative_cosine", report.config.clamp_negative_cosine},
                 {"fps", FrameEmbeddingSequence::kFps},
                 {"token_mode", "unicode-mixed"}};
  j["histogram_edges"] = {{"v_den", report.v.histogram.edges},
                          {"a_den", report.a.histogram.edges},
                          {"o_den", report.o.histogram.edges}};
  j["summary"] = {{"v_den", summary_json(report.v)}, {"a_den", summary_json(report.a)}, {"o_den", summary_json(report.o)}};
  json rows = json::array();
  for (const auto& p : report.per_video) {
    rows.push_back({{"video_id", p.video_id},
                    {"v_den", optional_json(p.v_den)},
                    {"a_den", optional_json(p.a_den)},
                    {"o_den", optional_json(p.o_den)}});
  }
  j["per_video"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string report_to_tsv(const CorpusDensityReport& report, const std::string& benchmark_name) {
  auto cell = [](const std::optional<double>& v) { return v ? fmt::format("{:.2f}", *v) : std::string("-"); };
  return fmt::format("Benchmark\tV_den\tA_den\tO_den\n{}\t{}\t{}\t{}\n", benchmark_name, cell(report.v.mean),
                     cell(report.a.mean), cell(report.o.mean));
}

}  // namespace evads::density
