// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/latent.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <utility>

#include "maskedit/error.hpp"

namespace maskedit {
namespace {

void check_same_shape(const LatentTensor& a, const LatentTensor& b) {
  if (!(a.shape() == b.shape())) {
    throw DimensionError("latent shapes differ");
  }
}

}  // namespace

LatentTensor::LatentTensor(LatentShape shape, std::vector<double> data,
                           int timestep_tag)
    : shape_(shape), data_(std::move(data)), timestep_tag_(timestep_tag) {
  if (shape_.batch < 1 || shape_.channels < 1 || shape_.height < 1 || shape_.width < 1) {
    throw DimensionError("latent dimensions must be positive");
  }
  if (data_.size() != shape_.numel()) {
    throw DimensionError("latent buffer has " + std::to_string(data_.size()) +
                         " values, shape needs " + std::to_string(shape_.numel()));
  }
}

LatentTensor LatentTensor::zeros(LatentShape shape, int timestep_tag) {
  return LatentTensor(shape, std::vector<double>(shape.numel(), 0.0), timestep_tag);
}

std::size_t LatentTensor::offset(int n, int c, int y, int x) const {
  return ((static_cast<std::size_t>(n) * shape_.channels + c) * shape_.height + y) *
             shape_.width + x;
}

double& LatentTensor::at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
double LatentTensor::at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

bool LatentTensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double LatentTensor::l2_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return std::sqrt(s);
}

LatentTensor LatentTensor::operator+(const LatentTensor& other) const {
  check_same_shape(*this, other);
  LatentTensor out = *this;
  for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] += other.data_[i];
  return out;
}

LatentTensor LatentTensor::operator-(const LatentTensor& other) const {
  check_same_shape(*this, other);
  LatentTensor out = *this;
  for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] -= other.data_[i];
  return out;
}

LatentTensor LatentTensor::operator*(double scale) const {
  LatentTensor out = *this;
  for (double& v : out.data_) v *= scale;
  return out;
}

bool LatentTensor::same_values(const LatentTensor& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

double relative_l2(const LatentTensor& estimate, const LatentTensor& reference) {
  const double ref = reference.l2_norm();
  const double err = (estimate - reference).l2_norm();
  return ref > 0.0 ? err / ref : err;
}

}  // namespace maskedit
