// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/attention.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "maskedit/error.hpp"

namespace maskedit {
namespace {

void check_qk(const FeatureMatrix& q, const FeatureMatrix& k) {
  if (k.n_tokens() < 1) throw DimensionError("attention needs at least one key");
  if (!q.empty() && q.dim() != k.dim()) {
    throw DimensionError("query dim " + std::to_string(q.dim()) +
                         " != key dim " + std::to_string(k.dim()));
  }
}

void check_kv(const FeatureMatrix& k, const FeatureMatrix& v) {
  if (k.n_tokens() != v.n_tokens()) {
    throw DimensionError("key count " + std::to_string(k.n_tokens()) +
                         " != value count " + std::to_string(v.n_tokens()));
  }
}

void softmax_rows(Matrix& logits) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const double peak = row.maxCoeff();
    // Scalar exp keeps exp(-inf) an exact zero; the vectorised path can leave a denormal.
    row = row.unaryExpr([peak](double x) { return std::exp(x - peak); });
    row /= row.sum();
  }
}

}  // namespace

Matrix attention_weights(const FeatureMatrix& q, const FeatureMatrix& k) {
  check_qk(q, k);
  if (q.empty()) return Matrix(0, k.n_tokens());
  const double scale = 1.0 / std::sqrt(static_cast<double>(k.dim()));
  Matrix logits = (q.data() * k.data().transpose()) * scale;
  softmax_rows(logits);
  return logits;
}

Matrix attention_weights(const FeatureMatrix& q, const FeatureMatrix& k,
                         const KeyMask& key_mask) {
  check_qk(q, k);
  if (key_mask.size() != static_cast<std::size_t>(k.n_tokens())) {
    throw DimensionError("key mask length " + std::to_string(key_mask.size()) +
                         " != key count " + std::to_string(k.n_tokens()));
  }
  if (key_mask.none()) throw EmptyMaskError("key mask admits no keys");
  if (q.empty()) return Matrix(0, k.n_tokens());

  const double scale = 1.0 / std::sqrt(static_cast<double>(k.dim()));
  Matrix logits = (q.data() * k.data().transpose()) * scale;
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < k.n_tokens(); ++j) {
    if (!key_mask[static_cast<std::size_t>(j)]) logits.col(j).setConstant(kNegInf);
  }
  softmax_rows(logits);
  return logits;
}

FeatureMatrix scaled_dot_attention(const FeatureMatrix& q,
                                   const FeatureMatrix& k,
                                   const FeatureMatrix& v) {
  check_kv(k, v);
  return FeatureMatrix(attention_weights(q, k) * v.data());
}

FeatureMatrix masked_attention(const FeatureMatrix& q, const FeatureMatrix& k,
                               const FeatureMatrix& v, const KeyMask& key_mask) {
  check_kv(k, v);
  return FeatureMatrix(attention_weights(q, k, key_mask) * v.data());
}

Extraction extract(const FeatureMatrix& x, const KeyMask& mask) {
  if (mask.size() != static_cast<std::size_t>(x.n_tokens())) {
    throw DimensionError("extract mask length " + std::to_string(mask.size()) +
                         " != token count " + std::to_string(x.n_tokens()));
  }
  std::vector<std::size_t> positions;
  positions.reserve(mask.count());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) positions.push_back(i);
  }
  Matrix rows(static_cast<Eigen::Index>(positions.size()), x.dim());
  for (std::size_t r = 0; r < positions.size(); ++r) {
    rows.row(static_cast<Eigen::Index>(r)) =
        x.data().row(static_cast<Eigen::Index>(positions[r]));
  }
  return {FeatureMatrix(std::move(rows)), IndexList(std::move(positions))};
}

FeatureMatrix scatter(std::span<const Extraction> parts, Eigen::Index n_tokens) {
  Eigen::Index dim = -1;
  for (const auto& part : parts) {
    if (static_cast<std::size_t>(part.rows.n_tokens()) != part.positions.size()) {
      throw DimensionError("scatter part has " +
                           std::to_string(part.rows.n_tokens()) + " rows but " +
                           std::to_string(part.positions.size()) + " positions");
    }
    if (part.rows.empty()) continue;
    if (dim < 0) {
      dim = part.rows.dim();
    } else if (part.rows.dim() != dim) {
      throw DimensionError("scatter parts disagree on dim");
    }
  }
  if (n_tokens > 0 && dim < 0) throw CoverageError("scatter parts cover no positions");

  Matrix out(n_tokens, dim < 0 ? 0 : dim);
  std::vector<std::uint8_t> owned(static_cast<std::size_t>(n_tokens), 0);
  for (const auto& part : parts) {
    for (std::size_t r = 0; r < part.positions.size(); ++r) {
      const std::size_t p = part.positions[r];
      if (p >= owned.size()) {
        throw CoverageError("scatter position " + std::to_string(p) +
                            " outside [0, " + std::to_string(n_tokens) + ")");
      }
      if (owned[p]) {
        throw CoverageError("scatter position " + std::to_string(p) +
                            " claimed twice");
      }
      owned[p] = 1;
      out.row(static_cast<Eigen::Index>(p)) =
          part.rows.data().row(static_cast<Eigen::Index>(r));
    }
  }
  for (std::size_t p = 0; p < owned.size(); ++p) {
    if (!owned[p]) throw CoverageError("scatter position " + std::to_string(p) + " not covered");
  }
  return FeatureMatrix(std::move(out));
}

}  // namespace maskedit
