// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/scheduler.hpp"

#include <cmath>
#include <string>

#include "maskedit/error.hpp"

namespace maskedit {

NoiseSchedule::NoiseSchedule(std::vector<double> alphas_cumprod, double final_alpha)
    : alphas_cumprod_(std::move(alphas_cumprod)), final_alpha_(final_alpha) {
  if (alphas_cumprod_.empty()) throw Error(ErrorCode::kSchedule, "empty noise schedule");
  for (std::size_t i = 0; i < alphas_cumprod_.size(); ++i) {
    const double a = alphas_cumprod_[i];
    if (!(a > 0.0 && a <= 1.0)) {
      throw Error(ErrorCode::kSchedule, "alpha-bar must lie in (0, 1]");
    }
    if (i > 0 && a > alphas_cumprod_[i - 1]) {
      throw Error(ErrorCode::kSchedule, "alpha-bar must not increase with noise level");
    }
  }
  if (!(final_alpha_ > 0.0 && final_alpha_ <= 1.0)) {
    throw Error(ErrorCode::kSchedule, "final alpha must lie in (0, 1]");
  }
}

NoiseSchedule NoiseSchedule::scaled_linear(int train_steps, double beta_start,
                                           double beta_end) {
  if (train_steps < 2) throw Error(ErrorCode::kSchedule, "need at least 2 train steps");
  std::vector<double> alphas(static_cast<std::size_t>(train_steps));
  const double lo = std::sqrt(beta_start);
  const double hi = std::sqrt(beta_end);
  double prod = 1.0;
  for (int i = 0; i < train_steps; ++i) {
    const double s = lo + (hi - lo) * static_cast<double>(i) / (train_steps - 1);
    prod *= 1.0 - s * s;
    alphas[static_cast<std::size_t>(i)] = prod;
  }
  const double final_alpha = alphas.front();
  return NoiseSchedule(std::move(alphas), final_alpha);
}

double NoiseSchedule::alpha_at(int timestep) const {
  if (timestep == LatentTensor::kCleanTimestep) return final_alpha_;
  if (timestep < 0 || timestep >= train_steps()) {
    throw Error(ErrorCode::kSchedule,
                "timestep " + std::to_string(timestep) + " outside the schedule");
  }
  return alphas_cumprod_[static_cast<std::size_t>(timestep)];
}

std::vector<int> NoiseSchedule::sampling_timesteps(int steps) const {
  if (steps < 1 || steps > train_steps() - 1) {
    throw Error(ErrorCode::kSchedule, "step count " + std::to_string(steps) +
                                          " incompatible with " +
                                          std::to_string(train_steps()) + " train steps");
  }
  const int stride = train_steps() / steps;
  std::vector<int> ts(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    ts[static_cast<std::size_t>(steps - 1 - k)] = k * stride + 1;
  }
  return ts;
}

std::vector<std::pair<int, int>> NoiseSchedule::sampling_pairs(int steps) const {
  const auto ts = sampling_timesteps(steps);
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    pairs.emplace_back(ts[i], i + 1 < ts.size() ? ts[i + 1] : LatentTensor::kCleanTimestep);
  }
  return pairs;
}

LatentTensor ddim_transfer(const LatentTensor& z, const LatentTensor& eps,
                           double alpha_from, double alpha_to) {
  if (!(z.shape() == eps.shape())) throw DimensionError("latent/noise shapes differ");
  const double sa_from = std::sqrt(alpha_from);
  const double sb_from = std::sqrt(1.0 - alpha_from);
  const double sa_to = std::sqrt(alpha_to);
  const double sb_to = std::sqrt(1.0 - alpha_to);
  LatentTensor out = z;
  auto& o = out.mutable_data();
  const auto& e = eps.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double x0 = (o[i] - sb_from * e[i]) / sa_from;
    o[i] = sa_to * x0 + sb_to * e[i];
  }
  return out;
}

LatentTensor ddim_step(const LatentTensor& z_t, const LatentTensor& eps, int t,
                       int t_prev, const NoiseSchedule& schedule) {
  if (!(t > t_prev)) {
    throw Error(ErrorCode::kSchedule, "ddim_step needs t > t_prev (got " +
                                          std::to_string(t) + ", " +
                                          std::to_string(t_prev) + ")");
  }
  LatentTensor out = ddim_transfer(z_t, eps, schedule.alpha_at(t), schedule.alpha_at(t_prev));
  out.set_timestep_tag(t_prev);
  return out;
}

}  // namespace maskedit
