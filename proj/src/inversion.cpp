// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/inversion.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#include "maskedit/error.hpp"

namespace maskedit {

InversionTrace::InversionTrace(std::vector<LatentTensor> latents, std::vector<int> timesteps)
    : latents_(std::move(latents)), timesteps_(std::move(timesteps)) {
  if (latents_.size() < 2 || latents_.size() != timesteps_.size()) {
    throw Error(ErrorCode::kInversion, "trace needs steps + 1 latents with matching timesteps");
  }
  for (std::size_t i = 0; i < latents_.size(); ++i) {
    if (i > 0 && timesteps_[i] <= timesteps_[i - 1]) {
      throw Error(ErrorCode::kInversion, "trace timesteps must increase");
    }
    if (!(latents_[i].shape() == latents_[0].shape())) {
      throw Error(ErrorCode::kInversion, "trace latents disagree on shape");
    }
    latents_[i].set_timestep_tag(timesteps_[i]);
  }
}

int InversionTrace::index_of(int timestep) const {
  for (std::size_t i = 0; i < timesteps_.size(); ++i) {
    if (timesteps_[i] == timestep) return static_cast<int>(i);
  }
  throw Error(ErrorCode::kSchedule, "no trace latent at timestep " + std::to_string(timestep));
}

InversionTrace ddim_invert(const LatentTensor& clean, Backend& backend, int steps) {
  const auto& schedule = backend.descriptor().schedule;
  auto ts = schedule.sampling_timesteps(steps);
  std::reverse(ts.begin(), ts.end());
  const PromptEmbedding null_text = backend.encode_text("");

  std::vector<LatentTensor> latents{clean};
  std::vector<int> timesteps{LatentTensor::kCleanTimestep};
  latents.front().set_timestep_tag(LatentTensor::kCleanTimestep);
  for (int i = 0; i < steps; ++i) {
    const LatentTensor& current = latents.back();
    const int t = ts[static_cast<std::size_t>(i)];
    ForwardOptions options;
    options.step_index = steps - 1 - i;
    LatentTensor eps = backend.predict_noise(current, t, null_text, options).eps;
    if (!eps.all_finite()) {
      throw Error(ErrorCode::kInversion,
                  "non-finite noise estimate at inversion step " + std::to_string(i));
    }
    LatentTensor next = ddim_transfer(current, eps, schedule.alpha_at(timesteps.back()), schedule.alpha_at(t));
    if (!next.all_finite()) {
      throw Error(ErrorCode::kInversion, "non-finite latent at inversion step " + std::to_string(i));
    }
    next.set_timestep_tag(t);
    latents.push_back(std::move(next));
    timesteps.push_back(t);
  }
  return InversionTrace(std::move(latents), std::move(timesteps));
}

LatentTensor ddim_sample(const LatentTensor& start, Backend& backend, const PromptEmbedding& cond,
                         int steps) {
  const auto& schedule = backend.descriptor().schedule;
  LatentTensor z = start;
  int step_index = 0;
  for (const auto& [t, t_prev] : schedule.sampling_pairs(steps)) {
    ForwardOptions options;
    options.step_index = step_index++;
    const LatentTensor eps = backend.predict_noise(z, t, cond, options).eps;
    z = ddim_step(z, eps, t, t_prev, schedule);
  }
  return z;
}

SourceFeatures source_features(const InversionTrace& trace, int t_index, Backend& backend,
                               const PromptEmbedding& null_embedding, int step_index) {
  if (t_index < 0 || t_index > trace.steps()) {
    throw Error(ErrorCode::kSchedule, "trace index " + std::to_string(t_index) + " out of range");
  }
  const LatentTensor& latent = trace.latents()[static_cast<std::size_t>(t_index)];
  CaptureHook capture;
  ForwardOptions options;
  options.hook = &capture;
  options.step_index = step_index;
  backend.predict_noise(latent, trace.timesteps()[static_cast<std::size_t>(t_index)],
                        null_embedding, options);

  SourceFeatures out;
  for (const auto& layer : backend.descriptor().sites) {
    if (layer.kind != AttentionKind::kSelf) continue;
    const auto it = capture.captures().find({AttentionKind::kSelf, layer.layer_index});
    if (it == capture.captures().end()) {
      throw Error(ErrorCode::kInstrumentation, "no capture for self-attention layer " +
                                                   std::to_string(layer.layer_index));
    }
    out[layer.layer_index] = SourceKV{it->second.k, it->second.v};
  }
  return out;
}

namespace {

std::string latent_file_name(std::size_t i) {
  std::ostringstream name;
  name << "latent_" << std::setw(4) << std::setfill('0') << i << ".f64";
  return name.str();
}

}  // namespace

void save_trace(const InversionTrace& trace, const std::string& backend_fingerprint,
                const std::filesystem::path& directory) {
  static_assert(std::endian::native == std::endian::little, "trace files are little-endian");
  std::filesystem::create_directories(directory);
  const auto& shape = trace.clean().shape();
  nlohmann::json manifest{
      {"format", "maskedit-trace-v1"},
      {"steps", trace.steps()},
      {"timesteps", trace.timesteps()},
      {"shape", {shape.batch, shape.channels, shape.height, shape.width}},
      {"backend_fingerprint", backend_fingerprint},
  };
  std::vector<std::string> files;
  for (std::size_t i = 0; i < trace.latents().size(); ++i) {
    const auto& data = trace.latents()[i].data();
    files.push_back(latent_file_name(i));
    std::ofstream out(directory / files.back(), std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!out) throw Error(ErrorCode::kIo, "cannot write trace latent " + files.back());
  }
  manifest["files"] = files;
  std::ofstream out(directory / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << "\n";
  if (!out) throw Error(ErrorCode::kIo, "cannot write trace manifest");
}

InversionTrace load_trace(const std::filesystem::path& directory,
                          const std::string& expected_fingerprint) {
  std::ifstream in(directory / "manifest.json");
  if (!in) throw Error(ErrorCode::kLoad, "no trace manifest in " + directory.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
    if (manifest.at("format") != "maskedit-trace-v1") {
      throw Error(ErrorCode::kLoad, "unknown trace format");
    }
    if (manifest.at("backend_fingerprint").get<std::string>() != expected_fingerprint) {
      throw Error(ErrorCode::kLoad, "trace was produced by a different backend");
    }
    const auto dims = manifest.at("shape").get<std::vector<int>>();
    if (dims.size() != 4) throw Error(ErrorCode::kLoad, "trace shape must have 4 axes");
    const LatentShape shape{dims[0], dims[1], dims[2], dims[3]};
    const auto timesteps = manifest.at("timesteps").get<std::vector<int>>();
    const auto files = manifest.at("files").get<std::vector<std::string>>();
    if (files.size() != timesteps.size()) throw Error(ErrorCode::kLoad, "trace file count mismatch");
    std::vector<LatentTensor> latents;
    for (std::size_t i = 0; i < files.size(); ++i) {
      std::ifstream f(directory / files[i], std::ios::binary);
      std::vector<double> data(shape.numel());
      f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
      if (!f || f.peek() != std::char_traits<char>::eof()) {
        throw Error(ErrorCode::kLoad, "trace latent " + files[i] + " has the wrong size");
      }
      latents.emplace_back(shape, std::move(data), timesteps[i]);
    }
    return InversionTrace(std::move(latents), timesteps);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kLoad, std::string("malformed trace manifest: ") + e.what());
  }
}

}  // namespace maskedit
