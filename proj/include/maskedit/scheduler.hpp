// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <utility>
#include <vector>

#include "maskedit/latent.hpp"

namespace maskedit {

// Cumulative signal levels (alpha-bar) over the training timesteps.
// Timestep LatentTensor::kCleanTimestep maps to `final_alpha`.
class NoiseSchedule {
 public:
  NoiseSchedule(std::vector<double> alphas_cumprod, double final_alpha);

  // Latent-diffusion default: betas linear in sqrt space between the given
  // endpoints; the clean state reuses alpha-bar at timestep 0.
  static NoiseSchedule scaled_linear(int train_steps = 1000,
                                     double beta_start = 0.00085,
                                     double beta_end = 0.012);

  int train_steps() const { return static_cast<int>(alphas_cumprod_.size()); }
  double final_alpha() const { return final_alpha_; }
  const std::vector<double>& alphas_cumprod() const { return alphas_cumprod_; }

  // Throws Error(kSchedule) outside [0, train_steps) unless clean.
  double alpha_at(int timestep) const;

  // Sampling timesteps for `steps` DDIM steps, noisiest first
  // (981, 961, ..., 1 for 50 steps out of 1000).
  std::vector<int> sampling_timesteps(int steps) const;

  // Timestep reached after the step that starts at sampling_timesteps[i].
  std::vector<std::pair<int, int>> sampling_pairs(int steps) const;

 private:
  std::vector<double> alphas_cumprod_;
  double final_alpha_;
};

// Deterministic DDIM move of `z` between two noise levels given the noise
// estimate `eps`. Works in either direction.
LatentTensor ddim_transfer(const LatentTensor& z, const LatentTensor& eps,
                           double alpha_from, double alpha_to);

// One eta = 0 denoising step from timestep `t` to the less noisy `t_prev`.
LatentTensor ddim_step(const LatentTensor& z_t, const LatentTensor& eps, int t,
                       int t_prev, const NoiseSchedule& schedule);

}  // namespace maskedit
