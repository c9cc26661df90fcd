// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

namespace maskedit {

struct LatentShape {
  int batch = 1;
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(batch) * channels * height * width;
  }
  bool operator==(const LatentShape&) const = default;
};

// Dense NCHW latent. `timestep_tag` records the noise level the latent
// belongs to (kCleanTimestep for an encoded image).
class LatentTensor {
 public:
  static constexpr int kCleanTimestep = -1;

  LatentTensor() = default;
  LatentTensor(LatentShape shape, std::vector<double> data,
               int timestep_tag = kCleanTimestep);

  static LatentTensor zeros(LatentShape shape, int timestep_tag = kCleanTimestep);

  const LatentShape& shape() const { return shape_; }
  int timestep_tag() const { return timestep_tag_; }
  void set_timestep_tag(int tag) { timestep_tag_ = tag; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& mutable_data() { return data_; }
  std::size_t numel() const { return data_.size(); }

  double& at(int n, int c, int y, int x);
  double at(int n, int c, int y, int x) const;

  bool all_finite() const;
  double l2_norm() const;

  // Same shape required; the result keeps this tensor's tag.
  LatentTensor operator+(const LatentTensor& other) const;
  LatentTensor operator-(const LatentTensor& other) const;
  LatentTensor operator*(double scale) const;

  // Bitwise equality of shape and values; tags are ignored.
  bool same_values(const LatentTensor& other) const;

 private:
  std::size_t offset(int n, int c, int y, int x) const;

  LatentShape shape_;
  std::vector<double> data_;
  int timestep_tag_ = kCleanTimestep;
};

double relative_l2(const LatentTensor& estimate, const LatentTensor& reference);

}  // namespace maskedit
