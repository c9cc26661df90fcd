// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskedit/backend.hpp"
#include "maskedit/config.hpp"
#include "maskedit/mask_input.hpp"

namespace maskedit {

// Listed in the only order a job may move through; kFailed may follow any
// non-terminal state.
enum class JobState { kQueued, kInverting, kDenoising, kDecoding, kDone, kFailed };
const char* job_state_name(JobState state);
std::optional<JobState> parse_job_state(const std::string& name);
bool is_terminal(JobState state);

struct EditJob {
  std::string id;
  std::uint64_t sequence = 0;  // FIFO order, survives restarts
  nlohmann::json request;      // image_id, mask_id and edit options
  JobState state = JobState::kQueued;
  int step = 0;
  int total_steps = 0;
  std::string reason;  // kFailed only
  std::string created_at;
  std::string updated_at;
  std::string result_image_id;
  std::string result_manifest_id;

  nlohmann::json to_json() const;
  static EditJob from_json(const nlohmann::json& j);
};

// Hash-named blobs plus a small JSON metadata record per blob.
class ArtifactStore {
 public:
  explicit ArtifactStore(std::filesystem::path root);
  // Returns the SHA-256 hex id; storing identical bytes twice is a no-op.
  std::string put(const std::string& bytes, const std::string& kind);
  std::optional<std::string> get(const std::string& id) const;
  std::optional<std::string> kind(const std::string& id) const;
  static bool valid_id(const std::string& id);

 private:
  std::filesystem::path root_;
};

class JobStore {
 public:
  explicit JobStore(std::filesystem::path root);
  void save(const EditJob& job) const;  // atomic replace
  std::vector<EditJob> load_all() const;

 private:
  std::filesystem::path root_;
};

using BackendFactory = std::function<std::unique_ptr<Backend>()>;

class JobService {
 public:
  JobService(ServiceConfig config, BackendFactory backend_factory,
             std::shared_ptr<SegmentationClient> segmentation = nullptr);
  ~JobService();
  JobService(const JobService&) = delete;
  JobService& operator=(const JobService&) = delete;

  // Recovers the job store, starts workers and binds the listener in the
  // background. Port 0 in the config picks a free port. Returns the port.
  int start();
  // Blocks until stop() is called.
  void wait();
  void stop();
  std::string endpoint() const;

  std::optional<EditJob> job(const std::string& id) const;
  // Number of pipelines currently executing; never above max_concurrent_jobs.
  int running_jobs() const;
  int peak_running_jobs() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace maskedit
