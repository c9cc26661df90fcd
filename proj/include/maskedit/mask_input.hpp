// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

// Source-mask resolution from a mask file, click points or a text phrase.
// Clicks and phrases go to an external promptable-segmentation service:
//
//   POST /segment   multipart/form-data
//     image: PNG bytes
//     spec:  {"clicks": [{"x": 10, "y": 4, "positive": true}, ...]}
//            or {"phrase": "the dog"}
//   200 -> {"mask": {"height": H, "width": W, "counts": [...]},
//           "confidence": 0.93}
//
// `counts` is a row-major run-length encoding that alternates zero and one
// runs, starting with a (possibly empty) zero run.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskedit/image.hpp"
#include "maskedit/mask.hpp"

namespace maskedit {

struct ClickPoint {
  int x = 0;
  int y = 0;
  bool positive = true;
  bool operator==(const ClickPoint&) const = default;
};

struct MaskSpec {
  enum class Kind { kFile, kClicks, kTextPhrase, kInline };

  Kind kind = Kind::kFile;
  std::filesystem::path file;
  std::vector<ClickPoint> clicks;
  std::string phrase;
  std::optional<SpatialMask> mask;  // kInline: an already-resolved mask

  static MaskSpec from_file(std::filesystem::path path);
  static MaskSpec from_clicks(std::vector<ClickPoint> clicks);
  static MaskSpec from_phrase(std::string phrase);
  static MaskSpec from_mask(SpatialMask mask);

  // Throws Error(kInvalidRequest): clicks outside the image, empty phrase...
  void validate(int image_height, int image_width) const;
  // Wire form of the request part sent to the segmentation service.
  nlohmann::json to_wire() const;
  std::string describe() const;
};

struct RunLengthMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  static RunLengthMask encode(const SpatialMask& mask);
  SpatialMask decode() const;
  nlohmann::json to_json() const;
  static RunLengthMask from_json(const nlohmann::json& j);
};

struct SegmentationResponse {
  SpatialMask mask;
  double confidence = 0.0;
};

class SegmentationClient {
 public:
  virtual ~SegmentationClient() = default;
  virtual SegmentationResponse segment(const std::string& image_png, const MaskSpec& spec) = 0;
};

struct RetryPolicy {
  int attempts = 3;
  int initial_backoff_ms = 100;
};

// Talks to a segmentation service over HTTP. Safe for concurrent use.
class HttpSegmentationClient : public SegmentationClient {
 public:
  // `endpoint` like "http://127.0.0.1:8901".
  explicit HttpSegmentationClient(std::string endpoint, RetryPolicy retry = {},
                                  int timeout_seconds = 30);
  SegmentationResponse segment(const std::string& image_png, const MaskSpec& spec) override;

 private:
  std::string endpoint_;
  RetryPolicy retry_;
  int timeout_seconds_;
};

// Memoizes responses by (image digest, spec digest).
class CachingSegmentationClient : public SegmentationClient {
 public:
  explicit CachingSegmentationClient(std::shared_ptr<SegmentationClient> upstream);
  SegmentationResponse segment(const std::string& image_png, const MaskSpec& spec) override;
  std::size_t upstream_calls() const;

 private:
  std::shared_ptr<SegmentationClient> upstream_;
  mutable std::mutex mutex_;
  std::map<std::string, SegmentationResponse> cache_;
  std::size_t upstream_calls_ = 0;
};

// Full-resolution binary mask for `image`. File masks must match the image
// size; service masks are binarized and resized to it. Throws
// EmptyMaskError when the resolved mask is empty.
SpatialMask resolve_mask(const MaskSpec& spec, const Image& image, SegmentationClient* client);

// Deterministic stand-in for a segmentation service, used by tests and
// demos. Clicks yield disks of `click_radius` around positive points minus
// disks around negative ones; phrases yield a centred ellipse covering the
// middle half of the image. A fixture response, when set, is replayed for
// every request instead.
class StubSegmentationServer {
 public:
  StubSegmentationServer();
  ~StubSegmentationServer();
  StubSegmentationServer(const StubSegmentationServer&) = delete;
  StubSegmentationServer& operator=(const StubSegmentationServer&) = delete;

  void set_click_radius(int radius) { click_radius_ = radius; }
  void set_fixture(nlohmann::json response);

  // Binds 127.0.0.1 on `port` (0 = any free port) and serves in the
  // background. Returns the bound port.
  int start(int port = 0);
  // Blocks serving on host:port until stop() is called from elsewhere.
  void serve_forever(const std::string& host, int port);
  void stop();
  std::string endpoint() const;
  std::size_t requests_served() const;

  static SpatialMask stub_mask(int height, int width, const MaskSpec& spec, int click_radius);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int click_radius_ = 3;
};

}  // namespace maskedit
