// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

// Source/target mask handling: per-task target-mask policies, refinement
// from recorded cross-attention, morphology, and per-site resampling.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "maskedit/control.hpp"
#include "maskedit/feature_matrix.hpp"
#include "maskedit/site.hpp"

namespace maskedit {

// Full-resolution mask with values in [0, 1]; the binary view is >= 0.5.
class SpatialMask {
 public:
  SpatialMask() = default;
  SpatialMask(int height, int width, std::vector<double> values);

  static SpatialMask zeros(int height, int width);
  static SpatialMask ones(int height, int width);
  static SpatialMask from_bits(int height, int width, const std::vector<std::uint8_t>& bits);

  int height() const { return height_; }
  int width() const { return width_; }
  double at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  bool bit(int y, int x) const { return at(y, x) >= 0.5; }
  const std::vector<double>& values() const { return values_; }

  std::vector<std::uint8_t> binarized() const;
  SpatialMask binary() const;
  std::size_t count_ones() const;
  bool empty_binary() const { return count_ones() == 0; }

  bool operator==(const SpatialMask&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

enum class TaskKind { kReplaceObject, kChangePoseView, kAlterBackground, kRemoveObject, kModifyRegion };

// CLI spellings: replace, pose, background, remove, region.
const char* task_kind_name(TaskKind task);
std::optional<TaskKind> parse_task_kind(const std::string& name);

enum class Refinement { kNone, kFromCrossAttention, kHullExtension };
const char* refinement_name(Refinement refinement);
std::optional<Refinement> parse_refinement(const std::string& name);

struct BinarizeRule {
  enum class Kind { kMeanPlusStd, kFixedThreshold };
  Kind kind = Kind::kMeanPlusStd;
  double threshold = 0.5;   // kFixedThreshold, in (0, 1)
  double std_factor = 0.5;  // kMeanPlusStd: mean + std_factor * std
};

struct MaskPolicyConfig {
  int hull_dilation_px = 8;
  int expand_px = 0;
  Refinement refinement = Refinement::kFromCrossAttention;
  BinarizeRule binarize;

  void validate() const;
};

SpatialMask dilate(const SpatialMask& mask, int radius_px);

// Filled convex hull of the binary mask's pixel centres.
SpatialMask convex_hull(const SpatialMask& mask);

// Area-averaged resize; values stay in [0, 1].
SpatialMask resize_mask(const SpatialMask& mask, int height, int width);

// Area-average onto `grid`, binarize at 0.5, flatten row-major.
KeyMask resample_mask(const SpatialMask& mask, Grid grid);

// Mean recorded map, min-max normalized, binarized at the aggregate's
// reference grid, then brought to (height x width) by nearest sampling.
// Throws Error(kDegenerateMap) for a constant map.
SpatialMask refine_mask_from_attention(const CrossAttentionAggregate& aggregate,
                                       const MaskPolicyConfig& config, int height, int width);

// Binary map at the reference grid, before resizing.
Matrix binarize_attention_map(const Matrix& mean_map, const BinarizeRule& rule);

enum class MaskSource { kZero, kSource, kExpandedSource, kConvexHull, kCrossAttention, kHullFallback };
const char* mask_source_name(MaskSource source);

struct TargetMaskDecision {
  SpatialMask mask;
  MaskSource source = MaskSource::kSource;
};

// Target mask for the step that has `step_index` steps completed before it.
TargetMaskDecision target_mask_policy(TaskKind task, const SpatialMask& source_mask,
                                      const CrossAttentionAggregate* aggregate,
                                      const MaskPolicyConfig& config, int step_index,
                                      int mask_switch_step);

// Single-channel 8-bit PNG; nonzero pixels are 1.
SpatialMask load_mask_png(const std::filesystem::path& path);
SpatialMask decode_mask_png(const std::string& bytes);
void save_mask_png(const SpatialMask& mask, const std::filesystem::path& path);
std::string encode_mask_png(const SpatialMask& mask);

}  // namespace maskedit
