// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

// JSON forms of edit options, mask specs and service settings shared by the
// CLI config file and the HTTP API. Unknown keys are rejected so that a typo
// never silently falls back to a default.

#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "maskedit/mask_input.hpp"
#include "maskedit/pipeline.hpp"

namespace maskedit {

// Applies the keys present in `j` onto `request`:
//   task, prompt, object_word, guidance, steps, seed, no_edit_control,
//   controllers{preservation, localization},
//   schedule{step_threshold, layer_threshold, normal_attention_fraction,
//            mask_switch_step, retain_object, gate_background},
//   mask_policy{hull_dilation_px, expand_px, refinement, binarize,
//               threshold, std_factor}
// retain_object follows the task default unless given explicitly. Throws
// Error(kInvalidRequest).
void apply_edit_options(const nlohmann::json& j, EditRequest& request);
nlohmann::json edit_options_json(const EditRequest& request);

// {"kind": "clicks", "clicks": [{"x":..,"y":..,"positive":true}, ...]}
// {"kind": "phrase", "phrase": "..."}
// {"kind": "file", "path": "..."}
MaskSpec mask_spec_from_json(const nlohmann::json& j);

// "x,y[,+|-];x,y..." as typed on the command line.
std::vector<ClickPoint> parse_clicks(const std::string& text);

struct ServiceConfig {
  std::string backend = "toy";
  std::string device = "cpu";
  std::size_t queue_size = 16;
  std::filesystem::path store_path = "maskedit-store";
  std::string segmentation_endpoint;  // empty: stub masks only for file/inline specs
  std::string host = "127.0.0.1";
  int port = 8080;
  int max_concurrent_jobs = 1;
  std::uint64_t toy_seed = 7;

  static ServiceConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace maskedit
