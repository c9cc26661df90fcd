// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/backend.hpp"

#include <string>

#include "maskedit/attention.hpp"
#include "maskedit/error.hpp"

namespace maskedit {

int BackendDescriptor::self_attention_layer_count() const {
  int n = 0;
  for (const auto& s : sites) n += s.kind == AttentionKind::kSelf;
  return n;
}

int BackendDescriptor::cross_attention_layer_count() const {
  int n = 0;
  for (const auto& s : sites) n += s.kind == AttentionKind::kCross;
  return n;
}

const AttentionLayerInfo& BackendDescriptor::layer(AttentionKind kind, int layer_index) const {
  for (const auto& s : sites) {
    if (s.kind == kind && s.layer_index == layer_index) return s;
  }
  throw Error(ErrorCode::kInstrumentation, std::string("no ") + attention_kind_name(kind) +
                                               "-attention layer " +
                                               std::to_string(layer_index));
}

void BackendDescriptor::validate() const {
  if (self_attention_layer_count() < 1 || cross_attention_layer_count() < 1) {
    throw Error(ErrorCode::kInstrumentation,
                "backend must declare at least one self- and one cross-attention layer");
  }
  int next_self = 0;
  int next_cross = 0;
  for (const auto& s : sites) {
    int& next = s.kind == AttentionKind::kSelf ? next_self : next_cross;
    if (s.layer_index != next++) {
      throw Error(ErrorCode::kInstrumentation,
                  "layers must be numbered in execution order per kind");
    }
    if (s.token_grid.h < 1 || s.token_grid.w < 1 || s.heads < 1 || s.head_dim < 1) {
      throw Error(ErrorCode::kInstrumentation, "layer geometry must be positive");
    }
  }
}

std::vector<FeatureMatrix> run_attention_site(AttentionHook* hook, const AttentionCall& call) {
  const int heads = call.heads();
  if (heads < 1 || static_cast<int>(call.k.size()) != heads ||
      static_cast<int>(call.v.size()) != heads) {
    throw Error(ErrorCode::kIntervention, "malformed attention call at " + call.site.describe());
  }
  std::optional<std::vector<FeatureMatrix>> replaced;
  if (hook != nullptr) replaced = hook->on_attention(call);
  if (!replaced) {
    std::vector<FeatureMatrix> out;
    out.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      out.push_back(scaled_dot_attention(call.q[h], call.k[h], call.v[h]));
    }
    return out;
  }
  if (static_cast<int>(replaced->size()) != heads) {
    throw Error(ErrorCode::kIntervention,
                "hook returned " + std::to_string(replaced->size()) + " heads for " +
                    std::to_string(heads) + " at " + call.site.describe());
  }
  for (int h = 0; h < heads; ++h) {
    const auto& out = (*replaced)[static_cast<std::size_t>(h)];
    if (out.n_tokens() != call.q[h].n_tokens() || out.dim() != call.v[h].dim()) {
      throw Error(ErrorCode::kIntervention,
                  "hook output for head " + std::to_string(h) + " is " +
                      std::to_string(out.n_tokens()) + "x" + std::to_string(out.dim()) +
                      ", expected " + std::to_string(call.q[h].n_tokens()) + "x" +
                      std::to_string(call.v[h].dim()) + " at " + call.site.describe());
    }
  }
  return std::move(*replaced);
}

NoiseResult Backend::predict_noise(const LatentTensor& z, int timestep,
                                   const PromptEmbedding& cond,
                                   const ForwardOptions& options) {
  const auto& desc = descriptor();
  if (!(z.shape() == desc.latent_shape)) {
    throw DimensionError("latent does not match the backend's latent shape");
  }
  if (cond.n_tokens() < 1) throw DimensionError("conditioning has no tokens");
  ++forward_count_;
  NoiseResult result = do_predict_noise(z, timestep, cond, options);
  if (!(result.eps.shape() == desc.latent_shape)) {
    throw DimensionError("backend returned a noise estimate of the wrong shape");
  }
  if (result.visited.size() != desc.sites.size()) {
    throw Error(ErrorCode::kInstrumentation,
                "forward pass visited " + std::to_string(result.visited.size()) + " of " +
                    std::to_string(desc.sites.size()) + " declared sites");
  }
  for (std::size_t i = 0; i < desc.sites.size(); ++i) {
    const auto& declared = desc.sites[i];
    const auto& seen = result.visited[i];
    if (seen.kind != declared.kind || seen.layer_index != declared.layer_index) {
      throw Error(ErrorCode::kInstrumentation,
                  "site " + std::to_string(i) + " visited out of declared order: " +
                      seen.describe());
    }
  }
  return result;
}

std::optional<std::vector<FeatureMatrix>> CaptureHook::on_attention(const AttentionCall& call) {
  captures_[{call.site.kind, call.site.layer_index}] = Capture{call.q, call.k, call.v};
  return std::nullopt;
}

}  // namespace maskedit
