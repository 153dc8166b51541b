#pragma once

#include <optional>
#include <string>
#include <vector>

#include "evads/corpus.hpp"

namespace evads::density {

struct DensityConfig {
  /// Temporal neighborhood half-width: frames j with |j - i| <= d.
  int neighborhood_d = 5;
  /// Output scale for visual dynamic density.
  double alpha = 100.0;
  /// Replace negative cosines with 0 so that 0 <= V_den <= alpha.
  bool clamp_negative_cosine = true;

  void validate() const;
};

struct DensityProfile {
  std::string video_id;
  std::optional<double> v_den;
  std::optional<double> a_den;
  std::optional<double> o_den;
};

struct Histogram {
  /// Bucket k counts values in [edges[k], edges[k+1]); the last bucket is
  /// closed on the right so the upper edge is included.
  std::vector<double> edges;
  std::vector<std::size_t> counts;

  static Histogram with_edges(std::vector<double> edges);
  void add(double value);
};

struct MetricSummary {
  std::optional<double> mean;
  std::size_t n = 0;
  Histogram histogram;
};

struct CorpusDensityReport {
  DensityConfig config;
  std::vector<DensityProfile> per_video;  // sorted by video_id
  MetricSummary v;
  MetricSummary a;
  MetricSummary o;
};

/// Weighted mean cosine similarity of `frame` (0-based) to its temporal
/// neighbours, weights exp(-|j-i| / 2d). A single-frame sequence returns 1.
double neighborhood_similarity(const FrameEmbeddingSequence& embeddings, const DensityConfig& cfg, std::size_t frame);

/// alpha * mean over frames of (1 - neighborhood similarity).
double visual_dynamic_density(const FrameEmbeddingSequence& embeddings, const DensityConfig& cfg);

/// Word count of the space-joined units divided by the duration in seconds.
double text_density(const std::vector<std::string>& text_units, double duration_s);

std::vector<std::string> asr_units(const std::vector<AsrSegment>& segments);
std::vector<std::string> ocr_units(const std::vector<OcrRecord>& records);

DensityProfile profile_video(const VideoRecord& record, const Artifacts& artifacts, const DensityConfig& cfg);

/// Profiles every record (in parallel up to `workers` threads); metrics a
/// record lacks artifacts for stay absent and are left out of that mean.
CorpusDensityReport corpus_density_report(const Manifest& manifest, const DensityConfig& cfg, unsigned workers = 0);

std::string report_to_json(const CorpusDensityReport& report);
/// Tab-separated row in the layout of a benchmark comparison table:
/// `Benchmark  V_den  A_den  O_den`.
std::string report_to_tsv(const CorpusDensityReport& report, const std::string& benchmark_name);

}  // namespace evads::density
