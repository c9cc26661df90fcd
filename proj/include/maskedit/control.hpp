// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

// Attention controllers for preservation adaptation (self-attention sites)
// and localized extraction (cross-attention sites), the per-site gating
// rules, and the cross-attention map recorder used for mask refinement.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "maskedit/attention.hpp"
#include "maskedit/feature_matrix.hpp"
#include "maskedit/site.hpp"

namespace maskedit {

struct EditSchedule {
  // Object features are re-sourced from the inversion trace only once
  // step_index > step_threshold and layer_index > layer_threshold.
  int step_threshold = 3;
  int layer_threshold = 8;
  // Share of self-attention sites that run plain attention for coherence.
  double normal_attention_fraction = 0.10;
  // Steps that keep the source mask before switching to the target mask.
  int mask_switch_step = 10;
  std::uint64_t rng_seed = 0;
  bool retain_object = false;
  // When set, background preservation obeys the same step/layer gate as the
  // object branch instead of running at every site.
  bool gate_background = false;

  // Throws Error(kSchedule) when inconsistent with `total_steps`.
  void validate(int total_steps) const;
};

// True once both the step and layer thresholds are passed.
bool past_step_layer_thresholds(const AttentionSite& site, const EditSchedule& schedule);
// Object retention is requested and the thresholds are passed.
bool foreground_gate_open(const AttentionSite& site, const EditSchedule& schedule);

// Background content read from the inversion trace, keys restricted to the
// complement of `source_mask` (1 = object).
FeatureMatrix preserve_background(const FeatureMatrix& q,
                                  const FeatureMatrix& k_source,
                                  const FeatureMatrix& v_source,
                                  const KeyMask& source_mask);

FeatureMatrix preserve_foreground(const FeatureMatrix& q, const FeatureMatrix& k,
                                  const FeatureMatrix& v,
                                  const FeatureMatrix& k_source,
                                  const FeatureMatrix& v_source,
                                  const KeyMask& target_mask,
                                  const AttentionSite& site,
                                  const EditSchedule& schedule);

// Row p comes from `foreground` where target_mask[p] = 1, else `background`.
FeatureMatrix compose_location(const FeatureMatrix& foreground,
                               const FeatureMatrix& background,
                               const KeyMask& target_mask);

// One query partition and the text keys/values it may read.
struct RegionContext {
  KeyMask region;
  FeatureMatrix keys;
  FeatureMatrix values;
};

// Each query token attends only to the context of the region that owns it.
// Regions must tile the query tokens.
FeatureMatrix partitioned_cross_attention(const FeatureMatrix& q,
                                          std::span<const RegionContext> regions);

// Tokens inside target_mask read the target prompt; the rest read null text.
FeatureMatrix localized_cross_attention(const FeatureMatrix& q,
                                        const FeatureMatrix& k_target,
                                        const FeatureMatrix& v_target,
                                        const FeatureMatrix& k_null,
                                        const FeatureMatrix& v_null,
                                        const KeyMask& target_mask);

// Deterministic in (rng_seed, step_index, layer_index).
bool should_use_normal_self_attention(const AttentionSite& site,
                                      const EditSchedule& schedule);

// Running sum of object-token attention mass, resampled onto a fixed grid.
class CrossAttentionAggregate {
 public:
  static constexpr Grid kDefaultReference{64, 64};

  explicit CrossAttentionAggregate(Grid reference = kDefaultReference);

  enum class Outcome { kRecorded, kSkippedNoObjectTokens };

  // `probs` is (site tokens x prompt tokens), rows summing to 1.
  Outcome record(const AttentionSite& site, const Matrix& probs,
                 const IndexList& object_token_positions);

  Grid reference() const { return reference_; }
  const Matrix& accumulated() const { return accumulated_; }
  int sample_count() const { return sample_count_; }
  int skipped_count() const { return skipped_count_; }
  Matrix mean_map() const;

 private:
  Grid reference_;
  Matrix accumulated_;
  int sample_count_ = 0;
  int skipped_count_ = 0;
};

// Nearest-cell resampling of an (h x w) map onto `to`.
Matrix resample_nearest(const Matrix& map, Grid to);

}  // namespace maskedit
