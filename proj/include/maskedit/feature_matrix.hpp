// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace maskedit {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Token-major feature block (n_tokens x dim) as seen at an attention site:
// queries, keys or values of a single head. Entries are always finite.
// A zero-row matrix is allowed so that empty extractions stay representable.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  explicit FeatureMatrix(Matrix data);
  FeatureMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static FeatureMatrix zeros(Eigen::Index n_tokens, Eigen::Index dim);

  Eigen::Index n_tokens() const { return data_.rows(); }
  Eigen::Index dim() const { return data_.cols(); }
  bool empty() const { return data_.rows() == 0; }

  const Matrix& data() const { return data_; }
  double operator()(Eigen::Index row, Eigen::Index col) const {
    return data_(row, col);
  }

  bool operator==(const FeatureMatrix& other) const;

 private:
  Matrix data_;
};

// Binary key/token selector. Entries are exactly 0 or 1.
class KeyMask {
 public:
  KeyMask() = default;
  explicit KeyMask(std::vector<std::uint8_t> bits);
  KeyMask(std::initializer_list<int> bits);

  static KeyMask ones(std::size_t n);
  static KeyMask zeros(std::size_t n);

  std::size_t size() const { return bits_.size(); }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  std::size_t count() const;
  bool all() const { return count() == size(); }
  bool none() const { return count() == 0; }

  KeyMask complement() const;
  std::span<const std::uint8_t> bits() const { return bits_; }

  bool operator==(const KeyMask&) const = default;

 private:
  std::vector<std::uint8_t> bits_;
};

// Strictly increasing token positions.
class IndexList {
 public:
  IndexList() = default;
  explicit IndexList(std::vector<std::size_t> positions);
  IndexList(std::initializer_list<std::size_t> positions);

  std::size_t size() const { return positions_.size(); }
  bool empty() const { return positions_.empty(); }
  std::size_t operator[](std::size_t i) const { return positions_[i]; }
  const std::vector<std::size_t>& positions() const { return positions_; }

  auto begin() const { return positions_.begin(); }
  auto end() const { return positions_.end(); }

  bool operator==(const IndexList&) const = default;

 private:
  std::vector<std::size_t> positions_;
};

}  // namespace maskedit
