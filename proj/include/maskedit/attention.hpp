// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

// Single-head attention algebra shared by the self- and cross-attention
// controllers. Everything here is pure; heads are looped by the caller.

#pragma once

#include <span>
#include <utility>

#include "maskedit/feature_matrix.hpp"

namespace maskedit {

// Row-stochastic weights softmax(Q K^T / sqrt(dim)). Keys whose mask bit is 0
// get a -inf logit and therefore exactly zero weight.
Matrix attention_weights(const FeatureMatrix& q, const FeatureMatrix& k);
Matrix attention_weights(const FeatureMatrix& q, const FeatureMatrix& k,
                         const KeyMask& key_mask);

FeatureMatrix scaled_dot_attention(const FeatureMatrix& q,
                                   const FeatureMatrix& k,
                                   const FeatureMatrix& v);

// Attention restricted to the admitted keys. Throws EmptyMaskError when no
// key is admitted.
FeatureMatrix masked_attention(const FeatureMatrix& q, const FeatureMatrix& k,
                               const FeatureMatrix& v, const KeyMask& key_mask);

struct Extraction {
  FeatureMatrix rows;
  IndexList positions;
};

// Rows of `x` selected by `mask`, in order, with their original positions.
Extraction extract(const FeatureMatrix& x, const KeyMask& mask);

// Reassembles rows at their recorded positions. The parts must tile
// [0, n_tokens) exactly and agree on dim.
FeatureMatrix scatter(std::span<const Extraction> parts, Eigen::Index n_tokens);

}  // namespace maskedit
