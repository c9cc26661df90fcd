// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include "maskedit/error.hpp"

namespace maskedit {
namespace {

[[noreturn]] void invalid(const std::string& message) { throw Error(ErrorCode::kInvalidRequest, message); }

void only_keys(const nlohmann::json& j, const char* where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) invalid(std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) invalid("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    invalid(std::string("bad value for '") + key + "'");
  }
}

}  // namespace

void apply_edit_options(const nlohmann::json& j, EditRequest& r) {
  only_keys(j, "edit options",
            {"task", "prompt", "object_word", "guidance", "steps", "seed", "no_edit_control",
             "controllers", "schedule", "mask_policy"});
  if (j.contains("task")) {
    std::string name;
    read(j, "task", name);
    const auto task = parse_task_kind(name);
    if (!task) invalid("unknown task '" + name + "' (replace, pose, background, remove, region)");
    r.task = *task;
    r.schedule.retain_object = default_retain_object(r.task);
  }
  read(j, "prompt", r.target_prompt);
  read(j, "object_word", r.object_word);
  read(j, "guidance", r.guidance_scale);
  read(j, "steps", r.steps);
  read(j, "seed", r.seed);
  read(j, "no_edit_control", r.no_edit_control);
  if (j.contains("controllers")) {
    const auto& c = j["controllers"];
    only_keys(c, "controllers", {"preservation", "localization"});
    read(c, "preservation", r.controllers.preservation);
    read(c, "localization", r.controllers.localization);
  }
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    only_keys(s, "schedule", {"step_threshold", "layer_threshold", "normal_attention_fraction",
                              "mask_switch_step", "retain_object", "gate_background"});
    read(s, "step_threshold", r.schedule.step_threshold);
    read(s, "layer_threshold", r.schedule.layer_threshold);
    read(s, "normal_attention_fraction", r.schedule.normal_attention_fraction);
    read(s, "mask_switch_step", r.schedule.mask_switch_step);
    read(s, "retain_object", r.schedule.retain_object);
    read(s, "gate_background", r.schedule.gate_background);
  }
  if (j.contains("mask_policy")) {
    const auto& m = j["mask_policy"];
    only_keys(m, "mask_policy",
              {"hull_dilation_px", "expand_px", "refinement", "binarize", "threshold", "std_factor"});
    read(m, "hull_dilation_px", r.mask_policy.hull_dilation_px);
    read(m, "expand_px", r.mask_policy.expand_px);
    if (m.contains("refinement")) {
      std::string name;
      read(m, "refinement", name);
      const auto ref = parse_refinement(name);
      if (!ref) invalid("unknown refinement '" + name + "' (none, cross-attention, hull)");
      r.mask_policy.refinement = *ref;
    }
    if (m.contains("binarize")) {
      std::string name;
      read(m, "binarize", name);
      if (name == "mean+std") r.mask_policy.binarize.kind = BinarizeRule::Kind::kMeanPlusStd;
      else if (name == "fixed") r.mask_policy.binarize.kind = BinarizeRule::Kind::kFixedThreshold;
      else invalid("unknown binarize rule '" + name + "' (mean+std, fixed)");
    }
    read(m, "threshold", r.mask_policy.binarize.threshold);
    read(m, "std_factor", r.mask_policy.binarize.std_factor);
  }
}

nlohmann::json edit_options_json(const EditRequest& r) {
  const auto& p = r.mask_policy;
  return {
      {"task", task_kind_name(r.task)},
      {"prompt", r.target_prompt},
      {"object_word", r.object_word},
      {"guidance", r.guidance_scale},
      {"steps", r.steps},
      {"seed", r.seed},
      {"no_edit_control", r.no_edit_control},
      {"controllers", {{"preservation", r.controllers.preservation},
                       {"localization", r.controllers.localization}}},
      {"schedule", {{"step_threshold", r.schedule.step_threshold},
                    {"layer_threshold", r.schedule.layer_threshold},
                    {"normal_attention_fraction", r.schedule.normal_attention_fraction},
                    {"mask_switch_step", r.schedule.mask_switch_step},
                    {"retain_object", r.schedule.retain_object},
                    {"gate_background", r.schedule.gate_background}}},
      {"mask_policy", {{"hull_dilation_px", p.hull_dilation_px},
                       {"expand_px", p.expand_px},
                       {"refinement", refinement_name(p.refinement)},
                       {"binarize", p.binarize.kind == BinarizeRule::Kind::kMeanPlusStd ? "mean+std" : "fixed"},
                       {"threshold", p.binarize.threshold},
                       {"std_factor", p.binarize.std_factor}}},
  };
}

MaskSpec mask_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("kind")) invalid("mask spec needs a \"kind\"");
  std::string kind;
  read(j, "kind", kind);
  if (kind == "clicks") {
    only_keys(j, "mask spec", {"kind", "clicks"});
    if (!j.contains("clicks") || !j["clicks"].is_array()) invalid("clicks mask spec needs a \"clicks\" array");
    std::vector<ClickPoint> clicks;
    for (const auto& c : j["clicks"]) {
      ClickPoint p;
      if (c.is_array() && (c.size() == 2 || c.size() == 3)) {
        p.x = c[0].get<int>();
        p.y = c[1].get<int>();
        if (c.size() == 3) p.positive = c[2].is_boolean() ? c[2].get<bool>() : c[2].get<int>() != 0;
      } else if (c.is_object()) {
        read(c, "x", p.x);
        read(c, "y", p.y);
        read(c, "positive", p.positive);
      } else {
        invalid("a click is [x, y, positive] or {\"x\", \"y\", \"positive\"}");
      }
      clicks.push_back(p);
    }
    return MaskSpec::from_clicks(std::move(clicks));
  }
  if (kind == "phrase") {
    only_keys(j, "mask spec", {"kind", "phrase"});
    std::string phrase;
    read(j, "phrase", phrase);
    return MaskSpec::from_phrase(phrase);
  }
  if (kind == "file") {
    only_keys(j, "mask spec", {"kind", "path"});
    std::string path;
    read(j, "path", path);
    if (path.empty()) invalid("file mask spec needs a \"path\"");
    return MaskSpec::from_file(path);
  }
  invalid("unknown mask spec kind '" + kind + "' (clicks, phrase, file)");
}

std::vector<ClickPoint> parse_clicks(const std::string& text) {
  std::vector<ClickPoint> out;
  std::stringstream all(text);
  std::string item;
  while (std::getline(all, item, ';')) {
    if (item.find_first_not_of(' ') == std::string::npos) continue;
    std::stringstream parts(item);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(parts, field, ',')) fields.push_back(field);
    if (fields.size() != 2 && fields.size() != 3) invalid("click '" + item + "' must be x,y or x,y,+/-");
    ClickPoint p;
    try {
      std::size_t used = 0;
      p.x = std::stoi(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument("x");
      p.y = std::stoi(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("y");
    } catch (const std::exception&) {
      invalid("click '" + item + "' has non-integer coordinates");
    }
    if (fields.size() == 3) {
      if (fields[2] == "+" || fields[2] == "1") p.positive = true;
      else if (fields[2] == "-" || fields[2] == "0") p.positive = false;
      else invalid("click polarity must be + or -");
    }
    out.push_back(p);
  }
  if (out.empty()) invalid("no clicks given");
  return out;
}

ServiceConfig ServiceConfig::from_json(const nlohmann::json& j) {
  only_keys(j, "service config", {"backend", "device", "queue_size", "store_path", "segmentation_endpoint",
                                  "host", "port", "max_concurrent_jobs", "toy_seed"});
  ServiceConfig c;
  read(j, "backend", c.backend);
  read(j, "device", c.device);
  read(j, "queue_size", c.queue_size);
  std::string store = c.store_path.string();
  read(j, "store_path", store);
  c.store_path = store;
  read(j, "segmentation_endpoint", c.segmentation_endpoint);
  read(j, "host", c.host);
  read(j, "port", c.port);
  read(j, "max_concurrent_jobs", c.max_concurrent_jobs);
  read(j, "toy_seed", c.toy_seed);
  if (c.queue_size < 1) invalid("queue_size must be >= 1");
  if (c.max_concurrent_jobs < 1) invalid("max_concurrent_jobs must be >= 1");
  if (c.port < 0 || c.port > 65535) invalid("port out of range");
  return c;
}

nlohmann::json ServiceConfig::to_json() const {
  return {{"backend", backend},       {"device", device},
          {"queue_size", queue_size}, {"store_path", store_path.string()},
          {"segmentation_endpoint", segmentation_endpoint},
          {"host", host},             {"port", port},
          {"max_concurrent_jobs", max_concurrent_jobs},
          {"toy_seed", toy_seed}};
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) invalid("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    invalid("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace maskedit
