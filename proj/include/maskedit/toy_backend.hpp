// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

// Small deterministic stand-in for a latent diffusion model. It has the
// same hook surface as a real network: an orthogonal patch "autoencoder",
// a hash-projection text encoder and a stack of residual blocks, each with
// one self-attention and one cross-attention site.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maskedit/backend.hpp"

namespace maskedit {

struct ToyBackendConfig {
  std::uint64_t seed = 7;
  Grid latent_grid{8, 8};
  int patch = 2;  // image pixels per latent cell along each axis
  int blocks = 2;
  int heads = 2;
  int head_dim = 4;
  int embed_dim = 8;
  int max_tokens = 77;
  // Overall scale of the noise estimate.
  double output_gain = 0.5;
  // Weight of the latent itself in the hidden state. Positional and time
  // embeddings carry the rest, so a small value keeps the predictor nearly
  // latent-independent and DDIM inversion nearly exact.
  double latent_gain = 0.002;
  // Adds a positional term to self-attention queries and keys so that the
  // logits fall off as -locality * squared grid distance. Needs head_dim >= 3.
  double locality = 1.0;
};

struct ToyWeights {
  Matrix vae;        // orthogonal, (3 p^2) x (3 p^2); latent = vae * patch
  Matrix input;      // channels x model_dim
  Matrix time_proj;  // time_features x model_dim
  Matrix position;   // tokens x model_dim
  Matrix local_q, local_k;  // tokens x head_dim, added to every self-attention head
  struct Block {
    Matrix self_q, self_k, self_v, self_out;     // model_dim x model_dim
    Matrix cross_q, cross_out;                   // model_dim x model_dim
    Matrix cross_k, cross_v;                     // embed_dim x model_dim
  };
  std::vector<Block> blocks;
  Matrix output;     // model_dim x channels
};

class ToyBackend : public Backend {
 public:
  static constexpr int kTimeFeatures = 4;

  explicit ToyBackend(ToyBackendConfig config = {});

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  PromptEmbedding encode_text(const std::string& prompt,
                              const std::string& object_word = "") override;
  LatentTensor encode_image(const Image& image) override;
  Image decode_latent(const LatentTensor& latent) override;

  const ToyBackendConfig& config() const { return config_; }
  const ToyWeights& weights() const { return weights_; }

  static std::vector<std::string> tokenize(const std::string& text);
  // Deterministic embedding row of a single token.
  std::vector<double> token_vector(const std::string& token) const;
  // Sinusoidal timestep features fed through time_proj.
  static std::vector<double> time_features(int timestep);
  // Multiplicative noise-estimate scale, sinusoidal in the timestep.
  double output_scale(int timestep) const;

 protected:
  NoiseResult do_predict_noise(const LatentTensor& z, int timestep,
                               const PromptEmbedding& cond,
                               const ForwardOptions& options) override;

 private:
  ToyBackendConfig config_;
  ToyWeights weights_;
  BackendDescriptor descriptor_;
};

}  // namespace maskedit
