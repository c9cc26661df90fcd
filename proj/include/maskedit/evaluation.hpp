// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskedit/image.hpp"
#include "maskedit/mask.hpp"
#include "maskedit/mask_input.hpp"

namespace maskedit {

struct ImbaSample {
  std::string id;
  std::filesystem::path image_path;
  std::string target_prompt;
  std::filesystem::path source_mask_path;
  TaskKind task = TaskKind::kReplaceObject;
  bool retain_object = false;
  std::string object_word;
  std::string notes;
};

// Category counts of a benchmark manifest. "modification" covers every
// sample that is not a background edit.
struct ImbaCounts {
  int total = 0;
  int retention = 0;
  int modification = 0;
  int background = 0;
  bool operator==(const ImbaCounts&) const = default;
};

inline constexpr ImbaCounts kFullImbaCounts{104, 43, 97, 7};

struct ImbaDataset {
  std::filesystem::path root;
  std::vector<ImbaSample> samples;
  ImbaCounts counts;
  bool partial = false;
};

// Reads <root>/manifest.json. Throws Error(kLoad) listing every offender.
ImbaDataset load_imba(const std::filesystem::path& root);

class EmbeddingClient {
 public:
  virtual ~EmbeddingClient() = default;
  virtual std::vector<double> embed_image(const Image& image) = 0;
  virtual std::vector<double> embed_text(const std::string& text) = 0;
  // Short tag recorded next to reported numbers.
  virtual std::string methodology() const = 0;
};

class PerceptualMetricClient {
 public:
  virtual ~PerceptualMetricClient() = default;
  virtual double distance(const Image& a, const Image& b) = 0;
  virtual std::string methodology() const = 0;
};

// Remote image/text embedding service:
//   POST /embed/image  multipart "image" (PNG)  -> {"embedding": [...]}
//   POST /embed/text   {"text": "..."}          -> {"embedding": [...]}
class HttpEmbeddingClient : public EmbeddingClient {
 public:
  explicit HttpEmbeddingClient(std::string endpoint, RetryPolicy retry = {}, int timeout_seconds = 60);
  std::vector<double> embed_image(const Image& image) override;
  std::vector<double> embed_text(const std::string& text) override;
  std::string methodology() const override { return "remote-embedding:" + endpoint_; }

 private:
  std::string endpoint_;
  RetryPolicy retry_;
  int timeout_seconds_;
};

// Remote perceptual distance service:
//   POST /distance  multipart "a", "b" (PNG)  -> {"distance": x}
class HttpPerceptualMetricClient : public PerceptualMetricClient {
 public:
  explicit HttpPerceptualMetricClient(std::string endpoint, RetryPolicy retry = {},
                                      int timeout_seconds = 60);
  double distance(const Image& a, const Image& b) override;
  std::string methodology() const override { return "remote-perceptual:" + endpoint_; }

 private:
  std::string endpoint_;
  RetryPolicy retry_;
  int timeout_seconds_;
};

// Offline stand-ins so the harness runs without model weights. Their numbers
// are not comparable with published CLIPScore or LPIPS values.
class ProxyEmbeddingClient : public EmbeddingClient {
 public:
  static constexpr int kDim = 48;
  std::vector<double> embed_image(const Image& image) override;
  std::vector<double> embed_text(const std::string& text) override;
  std::string methodology() const override { return "proxy-embedding (not CLIP)"; }
};

class ProxyPerceptualClient : public PerceptualMetricClient {
 public:
  // Mean squared difference averaged over a 3-level box pyramid.
  double distance(const Image& a, const Image& b) override;
  std::string methodology() const override { return "proxy-perceptual (not LPIPS)"; }
};

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// 100 * max(0, cos(image, text)). Throws Error(kMetric) on client failure.
double clip_score(const Image& image, const std::string& prompt, EmbeddingClient& client);

inline constexpr int kBackgroundDilationPx = 8;

// Zeroes the dilated object region in both images.
std::pair<Image, Image> background_composites(const Image& original, const Image& edited,
                                              const SpatialMask& source_mask,
                                              int dilation_px = kBackgroundDilationPx);

double background_lpips(const Image& original, const Image& edited, const SpatialMask& source_mask,
                        PerceptualMetricClient& client);

struct MetricRecord {
  std::string sample_id;
  double clip_score = 0;
  double lpips_background = 0;
  double wall_time_s = 0;
  bool operator==(const MetricRecord&) const = default;
};

struct ReportSummary {
  std::size_t count = 0;
  double mean_clip_score = 0;
  double mean_lpips_background = 0;
  double mean_wall_time_s = 0;
};

struct PublishedReference {
  const char* label;
  double clip_score;
  double lpips_background;
};

inline constexpr PublishedReference kPublishedReference{"published (SD-1.5, 104-sample IMBA)", 29.26,
                                                        0.149};

// Throws Error(kEmptyReport) on no records.
ReportSummary summarize(const std::vector<MetricRecord>& records);

struct ReportOptions {
  std::string methodology;
  std::vector<std::string> unscored;  // sample ids whose metrics failed
};

// Writes a plain-text table at `out_path` and the per-sample CSV next to it
// (same stem, ".csv"). Returns the CSV path.
std::filesystem::path write_report(const std::vector<MetricRecord>& records,
                                   const std::filesystem::path& out_path,
                                   const ReportOptions& options = {});

std::string records_to_csv(const std::vector<MetricRecord>& records);
std::vector<MetricRecord> records_from_csv(const std::string& text);
std::vector<MetricRecord> load_report_csv(const std::filesystem::path& path);

}  // namespace maskedit
