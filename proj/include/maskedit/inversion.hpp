// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

// Deterministic DDIM inversion under null-text conditioning, and replay of
// the trace to obtain source-branch keys/values at every self-attention site.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "maskedit/backend.hpp"
#include "maskedit/latent.hpp"

namespace maskedit {

// z_0 .. z_T with their timesteps, clean latent first. Immutable.
class InversionTrace {
 public:
  InversionTrace(std::vector<LatentTensor> latents, std::vector<int> timesteps);

  int steps() const { return static_cast<int>(latents_.size()) - 1; }
  const std::vector<LatentTensor>& latents() const { return latents_; }
  const std::vector<int>& timesteps() const { return timesteps_; }

  const LatentTensor& clean() const { return latents_.front(); }
  const LatentTensor& noisiest() const { return latents_.back(); }
  // Index of the latent tagged with `timestep`; throws Error(kSchedule).
  int index_of(int timestep) const;
  const LatentTensor& at_timestep(int timestep) const { return latents_[static_cast<std::size_t>(index_of(timestep))]; }

 private:
  std::vector<LatentTensor> latents_;
  std::vector<int> timesteps_;
};

// Guidance scale 1 with the null-text embedding throughout.
InversionTrace ddim_invert(const LatentTensor& clean, Backend& backend, int steps = 50);

// Plain DDIM sampling from `start` (tagged with the noisiest timestep of a
// `steps` grid) under `cond` at guidance scale 1, no interventions.
LatentTensor ddim_sample(const LatentTensor& start, Backend& backend, const PromptEmbedding& cond,
                         int steps);

struct SourceKV {
  std::vector<FeatureMatrix> k;  // per head
  std::vector<FeatureMatrix> v;
};

// Self-attention layer index -> source-branch keys/values.
using SourceFeatures = std::map<int, SourceKV>;

// One null-conditioned forward pass on trace latent `t_index`.
SourceFeatures source_features(const InversionTrace& trace, int t_index, Backend& backend,
                               const PromptEmbedding& null_embedding, int step_index = 0);

// One raw little-endian float64 file per latent plus manifest.json with the
// timesteps, latent shape and backend fingerprint.
void save_trace(const InversionTrace& trace, const std::string& backend_fingerprint,
                const std::filesystem::path& directory);
// Throws Error(kLoad) when the stored fingerprint differs from `expected`.
InversionTrace load_trace(const std::filesystem::path& directory,
                          const std::string& expected_fingerprint);

}  // namespace maskedit
