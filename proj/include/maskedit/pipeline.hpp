// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end real-image editing: resolve the source mask, encode, invert,
// then denoise with the preservation/localization controllers installed at
// every attention site, and decode.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskedit/backend.hpp"
#include "maskedit/control.hpp"
#include "maskedit/image.hpp"
#include "maskedit/mask.hpp"
#include "maskedit/mask_input.hpp"

namespace maskedit {

enum class Branch { kConditional, kUnconditional };

struct ControllerToggles {
  bool preservation = true;  // masked self-attention
  bool localization = true;  // partitioned cross-attention
  bool operator==(const ControllerToggles&) const = default;
};

struct EditRequest {
  Image image;
  std::string image_ref;  // echoed into manifests
  MaskSpec source_mask_spec;
  std::string target_prompt;
  std::string object_word;
  TaskKind task = TaskKind::kReplaceObject;
  EditSchedule schedule;
  MaskPolicyConfig mask_policy;
  double guidance_scale = 7.5;
  int steps = 50;
  // Seeds the normal-attention mixing stream (overrides schedule.rng_seed).
  std::uint64_t seed = 0;
  ControllerToggles controllers;
  // Reconstruction control run: an empty target prompt is allowed for any task.
  bool no_edit_control = false;

  // Throws Error(kInvalidRequest).
  void validate() const;
};

// Object retention defaults on only for pose/view changes.
bool default_retain_object(TaskKind task);

struct StepMaskRecord {
  int step_index = 0;
  int timestep = 0;
  MaskSource source = MaskSource::kSource;
  SpatialMask mask;
};

struct EditTimings {
  double resolve_mask_s = 0;
  double encode_s = 0;
  double inversion_s = 0;
  double denoise_s = 0;
  double decode_s = 0;
  double total_s = 0;
  std::vector<double> step_s;
};

struct EditResult {
  Image edited_image;  // at the input image's resolution
  LatentTensor final_latent;
  SpatialMask source_mask;  // at the backend's native resolution
  std::vector<StepMaskRecord> mask_record;
  EditTimings timing;
  nlohmann::json fingerprint;
  std::string fingerprint_digest;
  std::uint64_t forward_passes = 0;
  int normal_attention_sites = 0;
  bool trace_from_cache = false;
};

enum class EditStage { kInverting, kDenoising, kDecoding, kDone };
const char* edit_stage_name(EditStage stage);

class EditObserver {
 public:
  virtual ~EditObserver() = default;
  virtual void on_stage(EditStage) {}
  // After each denoising step; `completed` runs 1..total.
  virtual void on_step(int /*completed*/, int /*total*/) {}
  // Every controlled self-attention site. `background` is the per-head
  // background-preservation branch (null for plain/normal sites).
  virtual void on_self_attention(Branch, const AttentionSite&, bool /*normal*/,
                                 const std::vector<FeatureMatrix>& /*output*/,
                                 const std::vector<FeatureMatrix>* /*background*/) {}
  // Every localized cross-attention site, per-head outputs.
  virtual void on_cross_attention(Branch, const AttentionSite&,
                                  const std::vector<FeatureMatrix>& /*output*/) {}
};

struct EditContext {
  SegmentationClient* segmentation = nullptr;
  EditObserver* observer = nullptr;
  // Root directory for reusable inversion traces.
  std::optional<std::filesystem::path> trace_cache;
};

// eps_uncond + scale * (eps_cond - eps_uncond); exact at scale 0 and 1.
LatentTensor classifier_free_guidance(const LatentTensor& eps_cond, const LatentTensor& eps_uncond,
                                      double scale);

EditResult edit_image(const EditRequest& request, Backend& backend, const EditContext& context = {});

// Seeded standard-normal latent tagged with the noisiest timestep of a
// `steps` grid.
LatentTensor seeded_noise(const Backend& backend, int steps, std::uint64_t seed);

Image text_to_image(const std::string& prompt, Backend& backend, int steps, std::uint64_t seed,
                    double guidance_scale = 7.5);

struct RegionPrompt {
  std::string prompt;
  SpatialMask region;
};

// Generation from seeded noise where each region's cross-attention reads
// only its own prompt. Regions must partition every cross-attention grid.
Image multi_region_synthesis(std::span<const RegionPrompt> regions, Backend& backend, int steps,
                             std::uint64_t seed, double guidance_scale = 7.5);

// Structured per-edit record; "timing" and "created_at" are the only
// run-dependent keys.
nlohmann::json run_manifest(const EditRequest& request, const EditResult& result);

// Writes manifest.json, the edited image and per-step target-mask
// thumbnails under `directory`.
void write_run_outputs(const EditRequest& request, const EditResult& result,
                       const std::filesystem::path& image_path,
                       const std::filesystem::path& manifest_path);

}  // namespace maskedit
