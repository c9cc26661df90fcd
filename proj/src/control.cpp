// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/control.hpp"

#include <string>
#include <utility>
#include <vector>

#include "maskedit/error.hpp"
#include "maskedit/random.hpp"

namespace maskedit {
namespace {

void check_same_tokens(const FeatureMatrix& a, const FeatureMatrix& b,
                       const char* what) {
  if (a.n_tokens() != b.n_tokens() || a.dim() != b.dim()) {
    throw DimensionError(std::string(what) + ": shapes (" +
                         std::to_string(a.n_tokens()) + "x" + std::to_string(a.dim()) +
                         ") and (" + std::to_string(b.n_tokens()) + "x" +
                         std::to_string(b.dim()) + ") differ");
  }
}

}  // namespace

const char* attention_kind_name(AttentionKind kind) {
  return kind == AttentionKind::kSelf ? "self" : "cross";
}

std::string AttentionSite::describe() const {
  return std::string(attention_kind_name(kind)) + "-attention layer " +
         std::to_string(layer_index) + " at step " + std::to_string(step_index) +
         " (" + std::to_string(token_grid.h) + "x" + std::to_string(token_grid.w) + ")";
}

void EditSchedule::validate(int total_steps) const {
  if (step_threshold < 0 || step_threshold >= total_steps) {
    throw Error(ErrorCode::kSchedule,
                "step_threshold must lie in [0, " + std::to_string(total_steps) + ")");
  }
  if (!(normal_attention_fraction >= 0.0 && normal_attention_fraction <= 1.0)) {
    throw Error(ErrorCode::kSchedule, "normal_attention_fraction must lie in [0, 1]");
  }
  if (mask_switch_step < 0 || mask_switch_step > total_steps) {
    throw Error(ErrorCode::kSchedule,
                "mask_switch_step must lie in [0, " + std::to_string(total_steps) + "]");
  }
}

bool past_step_layer_thresholds(const AttentionSite& site, const EditSchedule& schedule) {
  return site.step_index > schedule.step_threshold &&
         site.layer_index > schedule.layer_threshold;
}

bool foreground_gate_open(const AttentionSite& site, const EditSchedule& schedule) {
  return schedule.retain_object && past_step_layer_thresholds(site, schedule);
}

FeatureMatrix preserve_background(const FeatureMatrix& q,
                                  const FeatureMatrix& k_source,
                                  const FeatureMatrix& v_source,
                                  const KeyMask& source_mask) {
  return masked_attention(q, k_source, v_source, source_mask.complement());
}

FeatureMatrix preserve_foreground(const FeatureMatrix& q, const FeatureMatrix& k,
                                  const FeatureMatrix& v,
                                  const FeatureMatrix& k_source,
                                  const FeatureMatrix& v_source,
                                  const KeyMask& target_mask,
                                  const AttentionSite& site,
                                  const EditSchedule& schedule) {
  if (foreground_gate_open(site, schedule)) {
    return masked_attention(q, k_source, v_source, target_mask);
  }
  return scaled_dot_attention(q, k, v);
}

FeatureMatrix compose_location(const FeatureMatrix& foreground,
                               const FeatureMatrix& background,
                               const KeyMask& target_mask) {
  check_same_tokens(foreground, background, "compose_location");
  if (target_mask.size() != static_cast<std::size_t>(foreground.n_tokens())) {
    throw DimensionError("compose_location: mask length " +
                         std::to_string(target_mask.size()) + " != token count " +
                         std::to_string(foreground.n_tokens()));
  }
  Matrix out = background.data();
  for (std::size_t p = 0; p < target_mask.size(); ++p) {
    if (target_mask[p]) {
      out.row(static_cast<Eigen::Index>(p)) =
          foreground.data().row(static_cast<Eigen::Index>(p));
    }
  }
  return FeatureMatrix(std::move(out));
}

FeatureMatrix partitioned_cross_attention(const FeatureMatrix& q,
                                          std::span<const RegionContext> regions) {
  if (regions.empty()) throw CoverageError("no cross-attention regions given");
  std::vector<Extraction> parts;
  parts.reserve(regions.size());
  Eigen::Index value_dim = -1;
  for (const auto& region : regions) {
    if (value_dim < 0) {
      value_dim = region.values.dim();
    } else if (region.values.dim() != value_dim) {
      throw DimensionError("cross-attention regions disagree on value dim");
    }
    auto queries = extract(q, region.region);
    if (queries.rows.empty()) continue;
    parts.push_back({scaled_dot_attention(queries.rows, region.keys, region.values),
                     std::move(queries.positions)});
  }
  return scatter(parts, q.n_tokens());
}

FeatureMatrix localized_cross_attention(const FeatureMatrix& q,
                                        const FeatureMatrix& k_target,
                                        const FeatureMatrix& v_target,
                                        const FeatureMatrix& k_null,
                                        const FeatureMatrix& v_null,
                                        const KeyMask& target_mask) {
  const RegionContext regions[] = {
      {target_mask, k_target, v_target},
      {target_mask.complement(), k_null, v_null},
  };
  return partitioned_cross_attention(q, regions);
}

bool should_use_normal_self_attention(const AttentionSite& site,
                                      const EditSchedule& schedule) {
  if (schedule.normal_attention_fraction <= 0.0) return false;
  if (schedule.normal_attention_fraction >= 1.0) return true;
  std::uint64_t state = splitmix64(schedule.rng_seed ^ 0x6e6f726d616c6d78ULL);
  state = splitmix64(state ^ static_cast<std::uint64_t>(site.step_index));
  state = splitmix64(state ^ (static_cast<std::uint64_t>(site.layer_index) << 32));
  return unit_interval(state) < schedule.normal_attention_fraction;
}

Matrix resample_nearest(const Matrix& map, Grid to) {
  if (to.h <= 0 || to.w <= 0 || map.rows() <= 0 || map.cols() <= 0) {
    throw DimensionError("resample_nearest needs non-empty grids");
  }
  Matrix out(to.h, to.w);
  for (int y = 0; y < to.h; ++y) {
    const auto sy = static_cast<Eigen::Index>((static_cast<long long>(y) * map.rows()) / to.h);
    for (int x = 0; x < to.w; ++x) {
      const auto sx = static_cast<Eigen::Index>((static_cast<long long>(x) * map.cols()) / to.w);
      out(y, x) = map(sy, sx);
    }
  }
  return out;
}

CrossAttentionAggregate::CrossAttentionAggregate(Grid reference)
    : reference_(reference), accumulated_(Matrix::Zero(reference.h, reference.w)) {
  if (reference.h <= 0 || reference.w <= 0) {
    throw DimensionError("aggregate reference grid must be positive");
  }
}

CrossAttentionAggregate::Outcome CrossAttentionAggregate::record(
    const AttentionSite& site, const Matrix& probs,
    const IndexList& object_token_positions) {
  if (site.kind != AttentionKind::kCross) {
    throw Error(ErrorCode::kInstrumentation,
                "cross-attention recording at " + site.describe());
  }
  if (probs.rows() != static_cast<Eigen::Index>(site.token_grid.size())) {
    throw DimensionError("recorded map has " + std::to_string(probs.rows()) +
                         " rows for a " + std::to_string(site.token_grid.size()) +
                         "-token site");
  }
  if (object_token_positions.empty()) {
    ++skipped_count_;
    return Outcome::kSkippedNoObjectTokens;
  }
  Matrix mass = Matrix::Zero(site.token_grid.h, site.token_grid.w);
  for (std::size_t p : object_token_positions) {
    if (static_cast<Eigen::Index>(p) >= probs.cols()) {
      throw DimensionError("object token position " + std::to_string(p) +
                           " outside the prompt");
    }
    for (int y = 0; y < site.token_grid.h; ++y) {
      for (int x = 0; x < site.token_grid.w; ++x) {
        mass(y, x) += probs(y * site.token_grid.w + x, static_cast<Eigen::Index>(p));
      }
    }
  }
  accumulated_ += resample_nearest(mass, reference_);
  ++sample_count_;
  return Outcome::kRecorded;
}

Matrix CrossAttentionAggregate::mean_map() const {
  if (sample_count_ == 0) return accumulated_;
  return accumulated_ / static_cast<double>(sample_count_);
}

}  // namespace maskedit
