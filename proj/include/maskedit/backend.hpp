// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

// Denoising-network abstraction with instrumented attention sites. A backend
// calls the installed AttentionHook once per declared site per forward pass,
// in declaration order, and uses whatever the hook returns as that site's
// attention output.

#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maskedit/feature_matrix.hpp"
#include "maskedit/image.hpp"
#include "maskedit/latent.hpp"
#include "maskedit/scheduler.hpp"
#include "maskedit/site.hpp"

namespace maskedit {

struct PromptEmbedding {
  Matrix token_embeddings;  // n_tokens x embed_dim
  std::vector<std::string> token_texts;
  IndexList object_token_positions;
  bool truncated = false;

  Eigen::Index n_tokens() const { return token_embeddings.rows(); }
};

struct AttentionLayerInfo {
  AttentionKind kind = AttentionKind::kSelf;
  int layer_index = 0;
  Grid token_grid;
  int heads = 1;
  int head_dim = 1;
};

struct BackendDescriptor {
  std::string name;
  LatentShape latent_shape;
  int image_height = 0;
  int image_width = 0;
  // Every attention site of one forward pass, in execution order.
  std::vector<AttentionLayerInfo> sites;
  NoiseSchedule schedule = NoiseSchedule::scaled_linear();
  // Identifies weights/configuration; stored in trace manifests.
  std::string fingerprint;

  int self_attention_layer_count() const;
  int cross_attention_layer_count() const;
  const AttentionLayerInfo& layer(AttentionKind kind, int layer_index) const;
  // Throws Error(kInstrumentation) on empty layer lists or misnumbered layers.
  void validate() const;
};

// Per-head projections at one site. At cross-attention sites,
// k_extra[i] / v_extra[i] hold this layer's projections of the i-th extra
// conditioning passed in ForwardOptions (e.g. null text for localized
// extraction, or one prompt per region).
struct AttentionCall {
  AttentionSite site;
  std::vector<FeatureMatrix> q;
  std::vector<FeatureMatrix> k;
  std::vector<FeatureMatrix> v;
  std::vector<std::vector<FeatureMatrix>> k_extra;
  std::vector<std::vector<FeatureMatrix>> v_extra;

  int heads() const { return static_cast<int>(q.size()); }
};

class AttentionHook {
 public:
  virtual ~AttentionHook() = default;
  // Per-head replacement outputs, or nullopt to keep plain attention.
  virtual std::optional<std::vector<FeatureMatrix>> on_attention(const AttentionCall& call) = 0;
};

// Runs the hook (if any) at a site and returns the per-head outputs the
// backend must use. Wrong-shaped replacements raise Error(kIntervention).
std::vector<FeatureMatrix> run_attention_site(AttentionHook* hook, const AttentionCall& call);

struct ForwardOptions {
  std::vector<const PromptEmbedding*> extra_conds;
  int step_index = 0;
  AttentionHook* hook = nullptr;
};

struct NoiseResult {
  LatentTensor eps;
  std::vector<AttentionSite> visited;
};

class Backend {
 public:
  virtual ~Backend() = default;

  virtual const BackendDescriptor& descriptor() const = 0;

  // "" yields the null-text embedding. Tokens of `object_word` found in the
  // prompt are reported in object_token_positions.
  virtual PromptEmbedding encode_text(const std::string& prompt,
                                      const std::string& object_word = "") = 0;
  virtual LatentTensor encode_image(const Image& image) = 0;
  virtual Image decode_latent(const LatentTensor& latent) = 0;

  // Validates shapes and site order around do_predict_noise.
  NoiseResult predict_noise(const LatentTensor& z, int timestep,
                            const PromptEmbedding& cond, const ForwardOptions& options = {});

  std::uint64_t forward_count() const { return forward_count_.load(); }

 protected:
  virtual NoiseResult do_predict_noise(const LatentTensor& z, int timestep,
                                       const PromptEmbedding& cond,
                                       const ForwardOptions& options) = 0;

 private:
  std::atomic<std::uint64_t> forward_count_{0};
};

// Records Q/K/V of every site it sees; never intervenes.
class CaptureHook : public AttentionHook {
 public:
  struct Capture {
    std::vector<FeatureMatrix> q, k, v;
  };
  std::optional<std::vector<FeatureMatrix>> on_attention(const AttentionCall& call) override;

  // Keyed by (kind, layer_index).
  const std::map<std::pair<AttentionKind, int>, Capture>& captures() const { return captures_; }

 private:
  std::map<std::pair<AttentionKind, int>, Capture> captures_;
};

}  // namespace maskedit
