// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>

namespace maskedit {

struct Grid {
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  bool operator==(const Grid&) const = default;
};

enum class AttentionKind { kSelf, kCross };

const char* attention_kind_name(AttentionKind kind);

// One attention layer invocation inside a denoising step. `layer_index`
// counts layers of the same kind in forward execution order, so self- and
// cross-attention layers are numbered independently from 0.
struct AttentionSite {
  int step_index = 0;
  int layer_index = 0;
  AttentionKind kind = AttentionKind::kSelf;
  Grid token_grid;

  std::string describe() const;
  bool operator==(const AttentionSite&) const = default;
};

}  // namespace maskedit
