// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/mask.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "maskedit/error.hpp"
#include "maskedit/image.hpp"

namespace maskedit {
namespace {

struct Point {
  long long x;
  long long y;
  bool operator<(const Point& o) const { return x != o.x ? x < o.x : y < o.y; }
  bool operator==(const Point&) const = default;
};

long long cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Counter-clockwise hull without collinear points (Andrew's monotone chain).
std::vector<Point> hull_of(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool inside_hull(const std::vector<Point>& hull, const Point& p) {
  if (hull.size() == 1) return p == hull[0];
  if (hull.size() == 2) {
    const auto& a = hull[0];
    const auto& b = hull[1];
    return cross(a, b, p) == 0 && p.x >= std::min(a.x, b.x) && p.x <= std::max(a.x, b.x) &&
           p.y >= std::min(a.y, b.y) && p.y <= std::max(a.y, b.y);
  }
  for (std::size_t i = 0; i < hull.size(); ++i) {
    if (cross(hull[i], hull[(i + 1) % hull.size()], p) < 0) return false;
  }
  return true;
}

// Row i holds the overlap share of each source cell in target cell i.
Matrix area_weights(int source, int target) {
  Matrix w = Matrix::Zero(target, source);
  const double scale = static_cast<double>(source) / target;
  for (int i = 0; i < target; ++i) {
    const double lo = i * scale;
    const double hi = (i + 1) * scale;
    for (int s = static_cast<int>(std::floor(lo)); s < source && s < hi; ++s) {
      const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
      if (overlap > 0) w(i, s) = overlap / scale;
    }
  }
  return w;
}

Matrix as_matrix(const SpatialMask& mask) {
  Matrix m(mask.height(), mask.width());
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) m(y, x) = mask.at(y, x);
  return m;
}

Matrix area_resize(const Matrix& m, int height, int width) {
  return area_weights(static_cast<int>(m.rows()), height) * m *
         area_weights(static_cast<int>(m.cols()), width).transpose();
}

}  // namespace

SpatialMask::SpatialMask(int height, int width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height_ < 1 || width_ < 1) throw DimensionError("mask dimensions must be positive");
  if (values_.size() != static_cast<std::size_t>(height_) * width_) {
    throw DimensionError("mask buffer does not match its dimensions");
  }
  for (double v : values_) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::kInvalidMask, "mask values must lie in [0, 1]");
  }
}

SpatialMask SpatialMask::zeros(int height, int width) {
  return SpatialMask(height, width, std::vector<double>(static_cast<std::size_t>(height) * width, 0.0));
}

SpatialMask SpatialMask::ones(int height, int width) {
  return SpatialMask(height, width, std::vector<double>(static_cast<std::size_t>(height) * width, 1.0));
}

SpatialMask SpatialMask::from_bits(int height, int width, const std::vector<std::uint8_t>& bits) {
  std::vector<double> values(bits.size());
  std::transform(bits.begin(), bits.end(), values.begin(), [](std::uint8_t b) { return b ? 1.0 : 0.0; });
  return SpatialMask(height, width, std::move(values));
}

std::vector<std::uint8_t> SpatialMask::binarized() const {
  std::vector<std::uint8_t> bits(values_.size());
  std::transform(values_.begin(), values_.end(), bits.begin(),
                 [](double v) { return static_cast<std::uint8_t>(v >= 0.5); });
  return bits;
}

SpatialMask SpatialMask::binary() const { return from_bits(height_, width_, binarized()); }

std::size_t SpatialMask::count_ones() const {
  return static_cast<std::size_t>(
      std::count_if(values_.begin(), values_.end(), [](double v) { return v >= 0.5; }));
}

const char* task_kind_name(TaskKind task) {
  switch (task) {
    case TaskKind::kReplaceObject: return "replace";
    case TaskKind::kChangePoseView: return "pose";
    case TaskKind::kAlterBackground: return "background";
    case TaskKind::kRemoveObject: return "remove";
    case TaskKind::kModifyRegion: return "region";
  }
  return "unknown";
}

std::optional<TaskKind> parse_task_kind(const std::string& name) {
  for (auto t : {TaskKind::kReplaceObject, TaskKind::kChangePoseView, TaskKind::kAlterBackground,
                 TaskKind::kRemoveObject, TaskKind::kModifyRegion}) {
    if (name == task_kind_name(t)) return t;
  }
  return std::nullopt;
}

const char* refinement_name(Refinement refinement) {
  switch (refinement) {
    case Refinement::kNone: return "none";
    case Refinement::kFromCrossAttention: return "cross-attention";
    case Refinement::kHullExtension: return "hull";
  }
  return "unknown";
}

std::optional<Refinement> parse_refinement(const std::string& name) {
  for (auto r : {Refinement::kNone, Refinement::kFromCrossAttention, Refinement::kHullExtension}) {
    if (name == refinement_name(r)) return r;
  }
  return std::nullopt;
}

const char* mask_source_name(MaskSource source) {
  switch (source) {
    case MaskSource::kZero: return "zero";
    case MaskSource::kSource: return "source";
    case MaskSource::kExpandedSource: return "expanded-source";
    case MaskSource::kConvexHull: return "convex-hull";
    case MaskSource::kCrossAttention: return "cross-attention";
    case MaskSource::kHullFallback: return "hull-fallback";
  }
  return "unknown";
}

void MaskPolicyConfig::validate() const {
  if (hull_dilation_px < 0 || expand_px < 0) {
    throw Error(ErrorCode::kPolicy, "dilation radii must be non-negative");
  }
  if (binarize.kind == BinarizeRule::Kind::kFixedThreshold &&
      !(binarize.threshold > 0.0 && binarize.threshold < 1.0)) {
    throw Error(ErrorCode::kPolicy, "fixed threshold must lie in (0, 1)");
  }
}

SpatialMask dilate(const SpatialMask& mask, int radius_px) {
  if (radius_px < 0) throw Error(ErrorCode::kPolicy, "dilation radius must be non-negative");
  if (radius_px == 0) return mask;
  const int h = mask.height();
  const int w = mask.width();
  const int r2 = radius_px * radius_px;
  std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double best = 0.0;
      for (int dy = -radius_px; dy <= radius_px; ++dy) {
        const int sy = y + dy;
        if (sy < 0 || sy >= h) continue;
        for (int dx = -radius_px; dx <= radius_px; ++dx) {
          const int sx = x + dx;
          if (sx < 0 || sx >= w || dy * dy + dx * dx > r2) continue;
          best = std::max(best, mask.at(sy, sx));
        }
      }
      out[static_cast<std::size_t>(y) * w + x] = best;
    }
  }
  return SpatialMask(h, w, std::move(out));
}

SpatialMask convex_hull(const SpatialMask& mask) {
  std::vector<Point> pts;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.bit(y, x)) pts.push_back({x, y});
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(mask.height()) * mask.width(), 0);
  if (pts.empty()) return SpatialMask::from_bits(mask.height(), mask.width(), bits);
  const auto hull = hull_of(std::move(pts));
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      bits[static_cast<std::size_t>(y) * mask.width() + x] = inside_hull(hull, {x, y});
  return SpatialMask::from_bits(mask.height(), mask.width(), bits);
}

SpatialMask resize_mask(const SpatialMask& mask, int height, int width) {
  if (height < 1 || width < 1) throw DimensionError("mask size must be positive");
  if (height == mask.height() && width == mask.width()) return mask;
  const Matrix m = area_resize(as_matrix(mask), height, width);
  std::vector<double> values(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      values[static_cast<std::size_t>(y) * width + x] = std::clamp(m(y, x), 0.0, 1.0);
  return SpatialMask(height, width, std::move(values));
}

KeyMask resample_mask(const SpatialMask& mask, Grid grid) {
  if (grid.h < 1 || grid.w < 1) throw DimensionError("resample grid must be positive");
  const Matrix m = area_resize(as_matrix(mask), grid.h, grid.w);
  std::vector<std::uint8_t> bits(grid.size());
  for (int y = 0; y < grid.h; ++y)
    for (int x = 0; x < grid.w; ++x)
      bits[static_cast<std::size_t>(y) * grid.w + x] = m(y, x) >= 0.5 - 1e-12;
  return KeyMask(std::move(bits));
}

Matrix binarize_attention_map(const Matrix& mean_map, const BinarizeRule& rule) {
  const double lo = mean_map.minCoeff();
  const double hi = mean_map.maxCoeff();
  if (!(hi - lo > 1e-12 * std::max(1.0, std::abs(hi)))) {
    throw Error(ErrorCode::kDegenerateMap, "cross-attention aggregate is constant");
  }
  const Matrix normalized = (mean_map.array() - lo) / (hi - lo);
  double threshold = rule.threshold;
  if (rule.kind == BinarizeRule::Kind::kMeanPlusStd) {
    const double mean = normalized.mean();
    const double var = (normalized.array() - mean).square().mean();
    threshold = mean + rule.std_factor * std::sqrt(var);
  }
  return (normalized.array() >= threshold).cast<double>();
}

SpatialMask refine_mask_from_attention(const CrossAttentionAggregate& aggregate,
                                       const MaskPolicyConfig& config, int height, int width) {
  if (aggregate.sample_count() < 1) {
    throw Error(ErrorCode::kPolicy, "mask refinement needs at least one recorded map");
  }
  const Matrix binary = binarize_attention_map(aggregate.mean_map(), config.binarize);
  const Grid ref = aggregate.reference();
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y) {
    const int sy = static_cast<int>((static_cast<long long>(y) * ref.h) / height);
    for (int x = 0; x < width; ++x) {
      const int sx = static_cast<int>((static_cast<long long>(x) * ref.w) / width);
      bits[static_cast<std::size_t>(y) * width + x] = binary(sy, sx) > 0.5;
    }
  }
  return SpatialMask::from_bits(height, width, bits);
}

TargetMaskDecision target_mask_policy(TaskKind task, const SpatialMask& source_mask,
                                      const CrossAttentionAggregate* aggregate,
                                      const MaskPolicyConfig& config, int step_index,
                                      int mask_switch_step) {
  config.validate();
  const int h = source_mask.height();
  const int w = source_mask.width();
  switch (task) {
    case TaskKind::kRemoveObject:
      return {SpatialMask::zeros(h, w), MaskSource::kZero};
    case TaskKind::kAlterBackground:
      return {source_mask, MaskSource::kSource};
    case TaskKind::kModifyRegion:
      if (config.expand_px == 0) return {source_mask, MaskSource::kSource};
      return {dilate(source_mask, config.expand_px), MaskSource::kExpandedSource};
    case TaskKind::kReplaceObject:
    case TaskKind::kChangePoseView:
      break;
  }
  if (step_index < mask_switch_step) return {source_mask, MaskSource::kSource};

  auto hull = [&] { return dilate(convex_hull(source_mask), config.hull_dilation_px); };
  switch (config.refinement) {
    case Refinement::kNone:
      return {source_mask, MaskSource::kSource};
    case Refinement::kHullExtension:
      return {hull(), MaskSource::kConvexHull};
    case Refinement::kFromCrossAttention:
      if (aggregate == nullptr || aggregate->sample_count() < 1) {
        throw Error(ErrorCode::kPolicy, "mask refinement at step " + std::to_string(step_index) +
                                            " needs recorded cross-attention maps");
      }
      try {
        return {refine_mask_from_attention(*aggregate, config, h, w), MaskSource::kCrossAttention};
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kDegenerateMap) throw;
        return {hull(), MaskSource::kHullFallback};
      }
  }
  return {source_mask, MaskSource::kSource};
}

SpatialMask decode_mask_png(const std::string& bytes) {
  const Image img = decode_png(bytes, 1);
  std::vector<std::uint8_t> bits(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), bits.begin(),
                 [](double v) { return static_cast<std::uint8_t>(v > 0.0); });
  return SpatialMask::from_bits(img.height, img.width, bits);
}

SpatialMask load_mask_png(const std::filesystem::path& path) {
  const Image img = load_png(path, 1);
  std::vector<std::uint8_t> bits(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), bits.begin(),
                 [](double v) { return static_cast<std::uint8_t>(v > 0.0); });
  return SpatialMask::from_bits(img.height, img.width, bits);
}

namespace {
Image mask_image(const SpatialMask& mask) {
  Image img = Image::filled(mask.height(), mask.width(), 1, 0.0);
  const auto bits = mask.binarized();
  for (std::size_t i = 0; i < bits.size(); ++i) img.pixels[i] = bits[i] ? 1.0 : 0.0;
  return img;
}
}  // namespace

void save_mask_png(const SpatialMask& mask, const std::filesystem::path& path) {
  save_png(mask_image(mask), path);
}

std::string encode_mask_png(const SpatialMask& mask) { return encode_png(mask_image(mask)); }

}  // namespace maskedit
