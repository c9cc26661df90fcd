// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/feature_matrix.hpp"

#include <algorithm>
#include <string>
#include <utility>

#include "maskedit/error.hpp"

namespace maskedit {

FeatureMatrix::FeatureMatrix(Matrix data) : data_(std::move(data)) {
  if (data_.rows() > 0 && data_.cols() < 1) {
    throw DimensionError("feature matrix must have dim >= 1");
  }
  if (!data_.allFinite()) {
    throw DimensionError("feature matrix contains non-finite entries");
  }
}

FeatureMatrix::FeatureMatrix(
    std::initializer_list<std::initializer_list<double>> rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = n > 0 ? static_cast<Eigen::Index>(rows.begin()->size()) : 0;
  Matrix data(n, d);
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    if (static_cast<Eigen::Index>(row.size()) != d) {
      throw DimensionError("ragged feature matrix literal");
    }
    Eigen::Index c = 0;
    for (double x : row) data(r, c++) = x;
    ++r;
  }
  *this = FeatureMatrix(std::move(data));
}

FeatureMatrix FeatureMatrix::zeros(Eigen::Index n_tokens, Eigen::Index dim) {
  return FeatureMatrix(Matrix::Zero(n_tokens, dim));
}

bool FeatureMatrix::operator==(const FeatureMatrix& other) const {
  return data_.rows() == other.data_.rows() &&
         data_.cols() == other.data_.cols() && data_ == other.data_;
}

KeyMask::KeyMask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto b : bits_) {
    if (b > 1) throw Error(ErrorCode::kInvalidMask, "key mask entries must be 0 or 1");
  }
}

KeyMask::KeyMask(std::initializer_list<int> bits) {
  bits_.reserve(bits.size());
  for (int b : bits) {
    if (b != 0 && b != 1) {
      throw Error(ErrorCode::kInvalidMask, "key mask entries must be 0 or 1");
    }
    bits_.push_back(static_cast<std::uint8_t>(b));
  }
}

KeyMask KeyMask::ones(std::size_t n) {
  return KeyMask(std::vector<std::uint8_t>(n, 1));
}

KeyMask KeyMask::zeros(std::size_t n) {
  return KeyMask(std::vector<std::uint8_t>(n, 0));
}

std::size_t KeyMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

KeyMask KeyMask::complement() const {
  std::vector<std::uint8_t> out(bits_.size());
  std::transform(bits_.begin(), bits_.end(), out.begin(),
                 [](std::uint8_t b) { return static_cast<std::uint8_t>(1 - b); });
  return KeyMask(std::move(out));
}

IndexList::IndexList(std::vector<std::size_t> positions)
    : positions_(std::move(positions)) {
  for (std::size_t i = 1; i < positions_.size(); ++i) {
    if (positions_[i] <= positions_[i - 1]) {
      throw CoverageError("index list must be strictly increasing");
    }
  }
}

IndexList::IndexList(std::initializer_list<std::size_t> positions)
    : IndexList(std::vector<std::size_t>(positions)) {}

}  // namespace maskedit
