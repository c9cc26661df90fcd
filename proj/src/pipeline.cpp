// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "maskedit/attention.hpp"
#include "maskedit/error.hpp"
#include "maskedit/hashing.hpp"
#include "maskedit/inversion.hpp"
#include "maskedit/random.hpp"

namespace maskedit {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Key masks of one spatial mask at every site grid, computed on demand.
class SiteMasks {
 public:
  explicit SiteMasks(const SpatialMask& mask) : mask_(&mask) {}

  const KeyMask& at(Grid grid) {
    auto [it, inserted] = cache_.try_emplace({grid.h, grid.w});
    if (inserted) it->second = resample_mask(*mask_, grid);
    return it->second;
  }

 private:
  const SpatialMask* mask_;
  std::map<std::pair<int, int>, KeyMask> cache_;
};

struct StepState {
  Branch branch = Branch::kConditional;
  const EditRequest* request = nullptr;
  const EditSchedule* schedule = nullptr;
  const SourceFeatures* source = nullptr;
  SiteMasks* source_masks = nullptr;
  SiteMasks* target_masks = nullptr;
  CrossAttentionAggregate* aggregate = nullptr;
  const IndexList* object_positions = nullptr;
  EditObserver* observer = nullptr;
  int* normal_sites = nullptr;
};

class EditHook : public AttentionHook {
 public:
  explicit EditHook(StepState state) : s_(state) {}

  std::optional<std::vector<FeatureMatrix>> on_attention(const AttentionCall& call) override {
    return call.site.kind == AttentionKind::kSelf ? self_attention(call) : cross_attention(call);
  }

 private:
  std::optional<std::vector<FeatureMatrix>> self_attention(const AttentionCall& call) {
    const auto& site = call.site;
    if (!s_.request->controllers.preservation) return std::nullopt;
    if (s_.schedule->gate_background && !past_step_layer_thresholds(site, *s_.schedule)) {
      return std::nullopt;
    }
    if (should_use_normal_self_attention(site, *s_.schedule)) {
      if (s_.branch == Branch::kConditional) ++*s_.normal_sites;
      if (s_.observer) {
        std::vector<FeatureMatrix> plain;
        for (int h = 0; h < call.heads(); ++h) {
          plain.push_back(scaled_dot_attention(call.q[h], call.k[h], call.v[h]));
        }
        s_.observer->on_self_attention(s_.branch, site, true, plain, nullptr);
        return plain;
      }
      return std::nullopt;
    }

    const auto it = s_.source->find(site.layer_index);
    if (it == s_.source->end()) {
      throw Error(ErrorCode::kInstrumentation, "no source features for " + site.describe());
    }
    const SourceKV& src = it->second;
    if (static_cast<int>(src.k.size()) != call.heads()) {
      throw Error(ErrorCode::kInstrumentation, "source head count differs at " + site.describe());
    }
    const KeyMask& source_mask = s_.source_masks->at(site.token_grid);
    const KeyMask& target_mask = s_.target_masks->at(site.token_grid);
    if (source_mask.all()) {
      throw Error(ErrorCode::kInvalidMask,
                  "source mask leaves no background tokens at " + site.describe());
    }

    std::vector<FeatureMatrix> background;
    std::vector<FeatureMatrix> out;
    for (int h = 0; h < call.heads(); ++h) {
      background.push_back(preserve_background(call.q[h], src.k[h], src.v[h], source_mask));
      if (target_mask.none()) {
        out.push_back(background.back());
        continue;
      }
      const FeatureMatrix foreground = preserve_foreground(
          call.q[h], call.k[h], call.v[h], src.k[h], src.v[h], target_mask, site, *s_.schedule);
      out.push_back(compose_location(foreground, background.back(), target_mask));
    }
    if (s_.observer) s_.observer->on_self_attention(s_.branch, site, false, out, &background);
    return out;
  }

  std::optional<std::vector<FeatureMatrix>> cross_attention(const AttentionCall& call) {
    const auto& site = call.site;
    if (s_.branch == Branch::kConditional && s_.aggregate != nullptr) {
      Matrix probs = Matrix::Zero(call.q[0].n_tokens(), call.k[0].n_tokens());
      for (int h = 0; h < call.heads(); ++h) probs += attention_weights(call.q[h], call.k[h]);
      probs /= static_cast<double>(call.heads());
      s_.aggregate->record(site, probs, *s_.object_positions);
    }
    if (!s_.request->controllers.localization) return std::nullopt;
    if (call.k_extra.empty()) {
      throw Error(ErrorCode::kInstrumentation, "null-text projections missing at " + site.describe());
    }
    const KeyMask& target_mask = s_.target_masks->at(site.token_grid);
    std::vector<FeatureMatrix> out;
    for (int h = 0; h < call.heads(); ++h) {
      out.push_back(localized_cross_attention(call.q[h], call.k[h], call.v[h], call.k_extra[0][h],
                                              call.v_extra[0][h], target_mask));
    }
    if (s_.observer) s_.observer->on_cross_attention(s_.branch, site, out);
    return out;
  }

  StepState s_;
};

nlohmann::json fingerprint_of(const EditRequest& r, const EditSchedule& schedule,
                              const BackendDescriptor& desc) {
  const auto& p = r.mask_policy;
  return {
      {"backend", desc.fingerprint},
      {"task", task_kind_name(r.task)},
      {"target_prompt", r.target_prompt},
      {"object_word", r.object_word},
      {"guidance_scale", r.guidance_scale},
      {"steps", r.steps},
      {"seed", r.seed},
      {"no_edit_control", r.no_edit_control},
      {"controllers", {{"preservation", r.controllers.preservation},
                       {"localization", r.controllers.localization}}},
      {"schedule", {{"step_threshold", schedule.step_threshold},
                    {"layer_threshold", schedule.layer_threshold},
                    {"normal_attention_fraction", schedule.normal_attention_fraction},
                    {"mask_switch_step", schedule.mask_switch_step},
                    {"retain_object", schedule.retain_object},
                    {"gate_background", schedule.gate_background}}},
      {"mask_policy", {{"hull_dilation_px", p.hull_dilation_px},
                       {"expand_px", p.expand_px},
                       {"refinement", refinement_name(p.refinement)},
                       {"binarize", p.binarize.kind == BinarizeRule::Kind::kMeanPlusStd
                                        ? "mean+std" : "fixed"},
                       {"threshold", p.binarize.threshold},
                       {"std_factor", p.binarize.std_factor}}},
  };
}

Grid finest_grid(const BackendDescriptor& desc) {
  Grid best{0, 0};
  for (const auto& s : desc.sites) {
    if (s.token_grid.size() > best.size()) best = s.token_grid;
  }
  return best;
}

InversionTrace invert_or_load(const LatentTensor& z0, Backend& backend, int steps,
                              const EditContext& context, bool& from_cache) {
  from_cache = false;
  if (!context.trace_cache) return ddim_invert(z0, backend, steps);
  const auto& fp = backend.descriptor().fingerprint;
  const std::string raw(reinterpret_cast<const char*>(z0.data().data()), z0.data().size() * sizeof(double));
  const auto dir = *context.trace_cache / sha256_hex(fp + "|" + std::to_string(steps) + "|" + sha256_hex(raw));
  if (std::filesystem::exists(dir / "manifest.json")) {
    try {
      auto trace = load_trace(dir, fp);
      if (trace.steps() == steps) {
        from_cache = true;
        return trace;
      }
    } catch (const Error&) {
      // Unreadable cache entries are rebuilt below.
    }
  }
  auto trace = ddim_invert(z0, backend, steps);
  save_trace(trace, fp, dir);
  return trace;
}

}  // namespace

const char* edit_stage_name(EditStage stage) {
  switch (stage) {
    case EditStage::kInverting: return "inverting";
    case EditStage::kDenoising: return "denoising";
    case EditStage::kDecoding: return "decoding";
    case EditStage::kDone: return "done";
  }
  return "unknown";
}

bool default_retain_object(TaskKind task) { return task == TaskKind::kChangePoseView; }

void EditRequest::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kInvalidRequest, m); };
  if (image.empty() || image.height < 1 || image.width < 1) fail("input image is empty");
  if (image.channels != 3) fail("input image must be RGB");
  if (!std::isfinite(guidance_scale) || guidance_scale < 1.0) fail("guidance_scale must be >= 1");
  if (steps < 10 || steps > 200) fail("steps must lie in [10, 200]");
  const bool blank = target_prompt.find_first_not_of(" \t\n") == std::string::npos;
  if (blank && task != TaskKind::kRemoveObject && !no_edit_control) {
    fail(std::string("target prompt is required for task '") + task_kind_name(task) + "'");
  }
  try {
    schedule.validate(steps);
    mask_policy.validate();
  } catch (const Error& e) {
    fail(e.what());
  }
  const bool refines = (task == TaskKind::kReplaceObject || task == TaskKind::kChangePoseView) &&
                       mask_policy.refinement == Refinement::kFromCrossAttention;
  if (refines && schedule.mask_switch_step == 0) {
    fail("cross-attention refinement needs mask_switch_step >= 1 to gather maps first");
  }
  source_mask_spec.validate(image.height, image.width);
}

LatentTensor classifier_free_guidance(const LatentTensor& eps_cond, const LatentTensor& eps_uncond,
                                      double scale) {
  if (!(eps_cond.shape() == eps_uncond.shape())) throw DimensionError("guidance branches differ in shape");
  if (scale == 1.0) return eps_cond;
  if (scale == 0.0) return eps_uncond;
  LatentTensor out = eps_uncond;
  auto& o = out.mutable_data();
  const auto& c = eps_cond.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += scale * (c[i] - o[i]);
  out.set_timestep_tag(eps_cond.timestep_tag());
  return out;
}

EditResult edit_image(const EditRequest& request, Backend& backend, const EditContext& context) {
  const auto run_start = Clock::now();
  request.validate();
  const auto& desc = backend.descriptor();
  EditResult result;
  EditObserver* observer = context.observer;

  EditSchedule schedule = request.schedule;
  schedule.rng_seed = request.seed;

  auto t0 = Clock::now();
  const SpatialMask source_full = resolve_mask(request.source_mask_spec, request.image, context.segmentation);
  result.timing.resolve_mask_s = seconds_since(t0);

  const bool resized = request.image.height != desc.image_height || request.image.width != desc.image_width;
  const Image native = resize_bilinear(request.image, desc.image_height, desc.image_width);
  result.source_mask = resized ? resize_mask(source_full, desc.image_height, desc.image_width).binary()
                               : source_full;
  if (result.source_mask.empty_binary()) {
    throw Error(ErrorCode::kInvalidMask, "source mask vanishes at the backend resolution");
  }

  t0 = Clock::now();
  const LatentTensor z0 = backend.encode_image(native);
  result.timing.encode_s = seconds_since(t0);

  if (observer) observer->on_stage(EditStage::kInverting);
  t0 = Clock::now();
  const InversionTrace trace = invert_or_load(z0, backend, request.steps, context, result.trace_from_cache);
  result.timing.inversion_s = seconds_since(t0);

  const PromptEmbedding null_text = backend.encode_text("");
  const PromptEmbedding target = backend.encode_text(request.target_prompt, request.object_word);
  CrossAttentionAggregate aggregate(finest_grid(desc));
  // Without object tokens there is nothing to aggregate; use the hull instead.
  MaskPolicyConfig policy = request.mask_policy;
  const bool no_object_tokens = policy.refinement == Refinement::kFromCrossAttention &&
                                target.object_token_positions.empty();
  if (no_object_tokens) policy.refinement = Refinement::kHullExtension;
  SiteMasks source_masks(result.source_mask);

  if (observer) observer->on_stage(EditStage::kDenoising);
  const auto denoise_start = Clock::now();
  const std::uint64_t passes_before = backend.forward_count();
  LatentTensor z = trace.noisiest();
  int step_index = 0;
  for (const auto& [t, t_prev] : desc.schedule.sampling_pairs(request.steps)) {
    const auto step_start = Clock::now();
    try {
      auto decision = target_mask_policy(request.task, result.source_mask, &aggregate, policy,
                                         step_index, schedule.mask_switch_step);
      if (no_object_tokens && decision.source == MaskSource::kConvexHull) {
        decision.source = MaskSource::kHullFallback;
      }
      result.mask_record.push_back({step_index, t, decision.source, decision.mask});
      SiteMasks target_masks(result.mask_record.back().mask);

      const SourceFeatures source =
          source_features(trace, trace.index_of(t), backend, null_text, step_index);

      StepState state;
      state.request = &request;
      state.schedule = &schedule;
      state.source = &source;
      state.source_masks = &source_masks;
      state.target_masks = &target_masks;
      state.aggregate = &aggregate;
      state.object_positions = &target.object_token_positions;
      state.observer = observer;
      state.normal_sites = &result.normal_attention_sites;

      ForwardOptions options;
      options.step_index = step_index;
      options.extra_conds = {&null_text};

      state.branch = Branch::kConditional;
      EditHook cond_hook(state);
      options.hook = &cond_hook;
      const LatentTensor eps_cond = backend.predict_noise(z, t, target, options).eps;

      state.branch = Branch::kUnconditional;
      EditHook uncond_hook(state);
      options.hook = &uncond_hook;
      const LatentTensor eps_uncond = backend.predict_noise(z, t, null_text, options).eps;

      const LatentTensor eps = classifier_free_guidance(eps_cond, eps_uncond, request.guidance_scale);
      z = ddim_step(z, eps, t, t_prev, desc.schedule);
      if (!z.all_finite()) throw Error(ErrorCode::kInversion, "non-finite latent");
    } catch (const Error& e) {
      throw Error(e.code(), "step " + std::to_string(step_index) + " (t=" + std::to_string(t) +
                                "): " + e.what());
    }
    result.timing.step_s.push_back(seconds_since(step_start));
    ++step_index;
    if (observer) observer->on_step(step_index, request.steps);
  }
  result.forward_passes = backend.forward_count() - passes_before;
  result.timing.denoise_s = seconds_since(denoise_start);

  if (observer) observer->on_stage(EditStage::kDecoding);
  t0 = Clock::now();
  result.final_latent = z;
  const Image decoded = backend.decode_latent(z);
  result.edited_image = resized ? resize_bilinear(decoded, request.image.height, request.image.width) : decoded;
  result.timing.decode_s = seconds_since(t0);

  result.fingerprint = fingerprint_of(request, schedule, desc);
  result.fingerprint_digest = sha256_hex(result.fingerprint.dump());
  result.timing.total_s = seconds_since(run_start);
  if (observer) observer->on_stage(EditStage::kDone);
  return result;
}

LatentTensor seeded_noise(const Backend& backend, int steps, std::uint64_t seed) {
  const auto& desc = backend.descriptor();
  const int t_start = desc.schedule.sampling_timesteps(steps).front();
  return LatentTensor(desc.latent_shape, seeded_normals(splitmix64(seed), desc.latent_shape.numel()), t_start);
}

namespace {

class RegionHook : public AttentionHook {
 public:
  RegionHook(const std::vector<SpatialMask>& regions) : regions_(regions) {}

  std::optional<std::vector<FeatureMatrix>> on_attention(const AttentionCall& call) override {
    if (call.site.kind != AttentionKind::kCross) return std::nullopt;
    if (call.k_extra.size() != regions_.size()) {
      throw Error(ErrorCode::kInstrumentation, "region prompt projections missing at " + call.site.describe());
    }
    std::vector<KeyMask> keys;
    for (const auto& r : regions_) keys.push_back(resample_mask(r, call.site.token_grid));
    std::vector<FeatureMatrix> out;
    for (int h = 0; h < call.heads(); ++h) {
      std::vector<RegionContext> contexts;
      for (std::size_t i = 0; i < regions_.size(); ++i) {
        contexts.push_back({keys[i], call.k_extra[i][h], call.v_extra[i][h]});
      }
      out.push_back(partitioned_cross_attention(call.q[h], contexts));
    }
    return out;
  }

 private:
  const std::vector<SpatialMask>& regions_;
};

Image sample_with(Backend& backend, int steps, std::uint64_t seed, double guidance,
                  const PromptEmbedding& cond, const std::vector<const PromptEmbedding*>& extras,
                  AttentionHook* hook) {
  const auto& desc = backend.descriptor();
  const PromptEmbedding null_text = backend.encode_text("");
  LatentTensor z = seeded_noise(backend, steps, seed);
  int step_index = 0;
  for (const auto& [t, t_prev] : desc.schedule.sampling_pairs(steps)) {
    ForwardOptions cond_options;
    cond_options.step_index = step_index;
    cond_options.extra_conds = extras;
    cond_options.hook = hook;
    const auto eps_cond = backend.predict_noise(z, t, cond, cond_options).eps;
    ForwardOptions uncond_options;
    uncond_options.step_index = step_index;
    const auto eps_uncond = backend.predict_noise(z, t, null_text, uncond_options).eps;
    z = ddim_step(z, classifier_free_guidance(eps_cond, eps_uncond, guidance), t, t_prev, desc.schedule);
    ++step_index;
  }
  return backend.decode_latent(z);
}

}  // namespace

Image text_to_image(const std::string& prompt, Backend& backend, int steps, std::uint64_t seed,
                    double guidance_scale) {
  const PromptEmbedding cond = backend.encode_text(prompt);
  return sample_with(backend, steps, seed, guidance_scale, cond, {}, nullptr);
}

Image multi_region_synthesis(std::span<const RegionPrompt> regions, Backend& backend, int steps,
                             std::uint64_t seed, double guidance_scale) {
  if (regions.empty()) throw Error(ErrorCode::kInvalidRequest, "at least one region prompt is required");
  const auto& desc = backend.descriptor();
  std::vector<SpatialMask> masks;
  std::vector<PromptEmbedding> embeddings;
  for (const auto& r : regions) {
    masks.push_back(resize_mask(r.region, desc.image_height, desc.image_width));
    embeddings.push_back(backend.encode_text(r.prompt));
  }
  for (const auto& layer : desc.sites) {
    if (layer.kind != AttentionKind::kCross) continue;
    std::vector<int> owners(layer.token_grid.size(), 0);
    for (const auto& m : masks) {
      const KeyMask k = resample_mask(m, layer.token_grid);
      for (std::size_t p = 0; p < k.size(); ++p) owners[p] += k[p];
    }
    for (int o : owners) {
      if (o != 1) {
        throw CoverageError("region masks do not partition the " + std::to_string(layer.token_grid.h) +
                            "x" + std::to_string(layer.token_grid.w) + " token grid");
      }
    }
  }
  std::vector<const PromptEmbedding*> extras;
  for (const auto& e : embeddings) extras.push_back(&e);
  RegionHook hook(masks);
  return sample_with(backend, steps, seed, guidance_scale, embeddings.front(), extras, &hook);
}

nlohmann::json run_manifest(const EditRequest& request, const EditResult& result) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& rec : result.mask_record) {
    const auto bits = rec.mask.binarized();
    steps.push_back({{"step_index", rec.step_index},
                     {"timestep", rec.timestep},
                     {"mask_source", mask_source_name(rec.source)},
                     {"mask_ones", rec.mask.count_ones()},
                     {"mask_sha256", sha256_hex(std::string(bits.begin(), bits.end()))}});
  }
  const auto& t = result.timing;
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ostringstream created;
  created << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
  const std::string png = encode_png(result.edited_image);
  return {
      {"format", "maskedit-run-v1"},
      {"request", {{"image", request.image_ref},
                   {"image_size", {request.image.height, request.image.width}},
                   {"mask", request.source_mask_spec.describe()},
                   {"target_prompt", request.target_prompt},
                   {"object_word", request.object_word},
                   {"task", task_kind_name(request.task)},
                   {"guidance_scale", request.guidance_scale},
                   {"steps", request.steps},
                   {"seed", request.seed}}},
      {"fingerprint", result.fingerprint},
      {"fingerprint_sha256", result.fingerprint_digest},
      {"source_mask_ones", result.source_mask.count_ones()},
      {"target_masks", steps},
      {"forward_passes", result.forward_passes},
      {"normal_attention_sites", result.normal_attention_sites},
      {"output_png_sha256", sha256_hex(png)},
      {"timing", {{"resolve_mask_s", t.resolve_mask_s}, {"encode_s", t.encode_s},
                  {"inversion_s", t.inversion_s}, {"denoise_s", t.denoise_s},
                  {"decode_s", t.decode_s}, {"total_s", t.total_s}, {"step_s", t.step_s},
                  {"trace_from_cache", result.trace_from_cache}}},
      {"created_at", created.str()},
  };
}

void write_run_outputs(const EditRequest& request, const EditResult& result,
                       const std::filesystem::path& image_path,
                       const std::filesystem::path& manifest_path) {
  if (image_path.has_parent_path()) std::filesystem::create_directories(image_path.parent_path());
  if (manifest_path.has_parent_path()) std::filesystem::create_directories(manifest_path.parent_path());
  save_png(result.edited_image, image_path);
  auto manifest = run_manifest(request, result);
  const auto masks_dir = manifest_path.parent_path() / (manifest_path.stem().string() + "_masks");
  std::filesystem::create_directories(masks_dir);
  for (std::size_t i = 0; i < result.mask_record.size(); ++i) {
    std::ostringstream name;
    name << "step_" << std::setw(3) << std::setfill('0') << result.mask_record[i].step_index << ".png";
    save_mask_png(result.mask_record[i].mask, masks_dir / name.str());
    manifest["target_masks"][i]["thumbnail"] = (std::filesystem::path(masks_dir.filename()) / name.str()).string();
  }
  manifest["output_image"] = image_path.filename().string();
  std::ofstream out(manifest_path, std::ios::trunc);
  out << manifest.dump(2) << "\n";
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + manifest_path.string());
}

}  // namespace maskedit
