// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/service.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "maskedit/error.hpp"
#include "maskedit/hashing.hpp"
#include "maskedit/image.hpp"
#include "maskedit/pipeline.hpp"

namespace maskedit {
namespace {

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms << 'Z';
  return ss.str();
}

std::optional<std::string> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << bytes;
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

int http_status_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kTransport: return 502;
    case ErrorCode::kIo: return 500;
    default: return 400;
  }
}

// Thrown from the observer to abandon a running job on shutdown; the job is
// left in its on-disk state and failed cleanly on the next start.
struct ShutdownRequested {};

}  // namespace

const char* job_state_name(JobState state) {
  switch (state) {
    case JobState::kQueued: return "queued";
    case JobState::kInverting: return "inverting";
    case JobState::kDenoising: return "denoising";
    case JobState::kDecoding: return "decoding";
    case JobState::kDone: return "done";
    case JobState::kFailed: return "failed";
  }
  return "unknown";
}

std::optional<JobState> parse_job_state(const std::string& name) {
  for (auto s : {JobState::kQueued, JobState::kInverting, JobState::kDenoising, JobState::kDecoding,
                 JobState::kDone, JobState::kFailed}) {
    if (name == job_state_name(s)) return s;
  }
  return std::nullopt;
}

bool is_terminal(JobState state) { return state == JobState::kDone || state == JobState::kFailed; }

nlohmann::json EditJob::to_json() const {
  nlohmann::json j = {{"job_id", id},           {"sequence", sequence},       {"request", request},
                      {"state", job_state_name(state)}, {"step", step},        {"total_steps", total_steps},
                      {"created_at", created_at}, {"updated_at", updated_at}};
  if (state == JobState::kFailed) j["reason"] = reason;
  if (!result_image_id.empty()) j["result_image_id"] = result_image_id;
  if (!result_manifest_id.empty()) j["result_manifest_id"] = result_manifest_id;
  return j;
}

EditJob EditJob::from_json(const nlohmann::json& j) {
  EditJob job;
  job.id = j.at("job_id").get<std::string>();
  job.sequence = j.at("sequence").get<std::uint64_t>();
  job.request = j.at("request");
  const auto state = parse_job_state(j.at("state").get<std::string>());
  if (!state) throw Error(ErrorCode::kLoad, "unknown job state in store");
  job.state = *state;
  job.step = j.value("step", 0);
  job.total_steps = j.value("total_steps", 0);
  job.reason = j.value("reason", "");
  job.created_at = j.value("created_at", "");
  job.updated_at = j.value("updated_at", "");
  job.result_image_id = j.value("result_image_id", "");
  job.result_manifest_id = j.value("result_manifest_id", "");
  return job;
}

ArtifactStore::ArtifactStore(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
}

bool ArtifactStore::valid_id(const std::string& id) {
  return id.size() == 64 &&
         std::all_of(id.begin(), id.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

std::string ArtifactStore::put(const std::string& bytes, const std::string& kind) {
  const std::string id = sha256_hex(bytes);
  const auto blob = root_ / id;
  if (!std::filesystem::exists(blob)) {
    write_atomic(blob, bytes);
    write_atomic(root_ / (id + ".json"),
                 nlohmann::json{{"kind", kind}, {"size", bytes.size()}, {"created_at", iso_now()}}.dump());
  }
  return id;
}

std::optional<std::string> ArtifactStore::get(const std::string& id) const {
  if (!valid_id(id)) return std::nullopt;
  return slurp(root_ / id);
}

std::optional<std::string> ArtifactStore::kind(const std::string& id) const {
  if (!valid_id(id)) return std::nullopt;
  const auto meta = slurp(root_ / (id + ".json"));
  if (!meta) return std::nullopt;
  return nlohmann::json::parse(*meta).value("kind", "");
}

JobStore::JobStore(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
}

void JobStore::save(const EditJob& job) const {
  write_atomic(root_ / (job.id + ".json"), job.to_json().dump(2));
}

std::vector<EditJob> JobStore::load_all() const {
  std::vector<EditJob> jobs;
  for (const auto& entry : std::filesystem::directory_iterator(root_)) {
    if (entry.path().extension() != ".json") continue;
    const auto text = slurp(entry.path());
    if (!text) continue;
    try {
      jobs.push_back(EditJob::from_json(nlohmann::json::parse(*text)));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kLoad, "corrupt job record " + entry.path().string() + ": " + e.what());
    }
  }
  std::sort(jobs.begin(), jobs.end(), [](const EditJob& a, const EditJob& b) { return a.sequence < b.sequence; });
  return jobs;
}

struct JobService::Impl {
  ServiceConfig config;
  BackendFactory backend_factory;
  std::shared_ptr<SegmentationClient> segmentation;
  ArtifactStore artifacts;
  JobStore job_store;
  httplib::Server server;
  std::thread listener;
  std::vector<std::thread> workers;
  int port = 0;

  mutable std::mutex mutex;
  std::condition_variable queue_cv;
  std::condition_variable events_cv;
  std::map<std::string, EditJob> jobs;
  std::map<std::string, std::vector<nlohmann::json>> events;
  std::deque<std::string> queue;
  std::uint64_t next_sequence = 1;
  std::atomic<bool> stopping{false};
  std::atomic<bool> stopped{false};
  int running = 0;
  int peak_running = 0;
  std::mutex stop_mutex;
  std::condition_variable stop_cv;

  Impl(ServiceConfig c, BackendFactory f, std::shared_ptr<SegmentationClient> s)
      : config(std::move(c)),
        backend_factory(std::move(f)),
        segmentation(std::move(s)),
        artifacts(config.store_path / "artifacts"),
        job_store(config.store_path / "jobs") {}

  // Callers hold `mutex`.
  void push_event(EditJob& job) {
    auto& list = events[job.id];
    nlohmann::json e = {{"seq", list.size() + 1},
                        {"state", job_state_name(job.state)},
                        {"step", job.step},
                        {"total", job.total_steps}};
    if (job.state == JobState::kFailed) e["reason"] = job.reason;
    list.push_back(std::move(e));
    events_cv.notify_all();
  }

  void update(const std::string& id, JobState state, int step, bool emit, const std::string& reason = "") {
    std::lock_guard lock(mutex);
    auto& job = jobs.at(id);
    job.state = state;
    job.step = step;
    if (state == JobState::kFailed) job.reason = reason;
    job.updated_at = iso_now();
    job_store.save(job);
    if (emit) push_event(job);
  }

  void recover() {
    std::lock_guard lock(mutex);
    for (auto& job : job_store.load_all()) {
      next_sequence = std::max(next_sequence, job.sequence + 1);
      if (job.state == JobState::kQueued) {
        queue.push_back(job.id);
      } else if (!is_terminal(job.state)) {
        job.state = JobState::kFailed;
        job.reason = "interrupted by a service restart";
        job.updated_at = iso_now();
        job_store.save(job);
      }
      const std::string id = job.id;
      jobs[id] = std::move(job);
      push_event(jobs[id]);
    }
  }

  EditRequest build_request(const nlohmann::json& body) const {
    if (!body.is_object()) throw Error(ErrorCode::kInvalidRequest, "edit request must be a JSON object");
    if (!body.contains("image_id") || !body["image_id"].is_string()) {
      throw Error(ErrorCode::kInvalidRequest, "edit request needs \"image_id\"");
    }
    if (!body.contains("mask_id") || !body["mask_id"].is_string()) {
      throw Error(ErrorCode::kInvalidRequest, "edit request needs \"mask_id\"");
    }
    const auto image_id = body["image_id"].get<std::string>();
    const auto mask_id = body["mask_id"].get<std::string>();
    const auto image_bytes = artifacts.get(image_id);
    if (!image_bytes) throw Error(ErrorCode::kLoad, "unknown image id " + image_id);
    const auto mask_bytes = artifacts.get(mask_id);
    if (!mask_bytes) throw Error(ErrorCode::kLoad, "unknown mask id " + mask_id);

    EditRequest r;
    r.image = decode_png(*image_bytes);
    r.image_ref = "image:" + image_id;
    r.source_mask_spec = MaskSpec::from_mask(decode_mask_png(*mask_bytes));
    nlohmann::json options = body;
    options.erase("image_id");
    options.erase("mask_id");
    apply_edit_options(options, r);
    r.validate();
    if (r.source_mask_spec.mask->height() != r.image.height || r.source_mask_spec.mask->width() != r.image.width) {
      throw Error(ErrorCode::kInvalidMask, "mask size differs from the image size");
    }
    return r;
  }

  class JobObserver : public EditObserver {
   public:
    JobObserver(Impl& impl, std::string id) : impl_(impl), id_(std::move(id)) {}
    void on_stage(EditStage stage) override {
      if (impl_.stopping) throw ShutdownRequested{};
      switch (stage) {
        case EditStage::kInverting: impl_.update(id_, JobState::kInverting, 0, true); break;
        case EditStage::kDenoising: impl_.update(id_, JobState::kDenoising, 0, false); break;
        case EditStage::kDecoding: impl_.update(id_, JobState::kDecoding, current_, true); break;
        case EditStage::kDone: break;  // reported once the result is stored
      }
    }
    void on_step(int completed, int) override {
      current_ = completed;
      impl_.update(id_, JobState::kDenoising, completed, true);
      if (impl_.stopping) throw ShutdownRequested{};
    }

   private:
    Impl& impl_;
    std::string id_;
    int current_ = 0;
  };

  void run_job(const std::string& id, std::unique_ptr<Backend>& backend) {
    nlohmann::json request_json;
    {
      std::lock_guard lock(mutex);
      request_json = jobs.at(id).request;
    }
    try {
      const EditRequest request = build_request(request_json);
      if (!backend) backend = backend_factory();
      JobObserver observer(*this, id);
      EditContext context;
      context.segmentation = segmentation.get();
      context.observer = &observer;
      context.trace_cache = config.store_path / "traces";
      const EditResult result = edit_image(request, *backend, context);
      const auto image_id = artifacts.put(encode_png(result.edited_image), "result-image");
      const auto manifest_id = artifacts.put(run_manifest(request, result).dump(2), "run-manifest");
      std::lock_guard lock(mutex);
      auto& job = jobs.at(id);
      job.result_image_id = image_id;
      job.result_manifest_id = manifest_id;
      job.state = JobState::kDone;
      job.updated_at = iso_now();
      job_store.save(job);
      push_event(job);
    } catch (const ShutdownRequested&) {
      // Left as-is on disk.
    } catch (const std::exception& e) {
      int step = 0;
      {
        std::lock_guard lock(mutex);
        step = jobs.at(id).step;
      }
      update(id, JobState::kFailed, step, true, e.what());
    }
  }

  void worker_loop() {
    std::unique_ptr<Backend> backend;
    while (true) {
      std::string id;
      {
        std::unique_lock lock(mutex);
        queue_cv.wait(lock, [&] { return stopping || !queue.empty(); });
        if (stopping) return;
        id = queue.front();
        queue.pop_front();
        ++running;
        peak_running = std::max(peak_running, running);
      }
      run_job(id, backend);
      std::lock_guard lock(mutex);
      --running;
    }
  }

  std::size_t queued_count() const {
    std::size_t n = 0;
    for (const auto& [id, job] : jobs) n += job.state == JobState::kQueued;
    return n;
  }

  void routes();
};

void JobService::Impl::routes() {
  server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
    std::lock_guard lock(mutex);
    send_json(res, 200, {{"status", "ok"},
                         {"backend", config.backend},
                         {"device", config.device},
                         {"queued", queued_count()},
                         {"running", running},
                         {"max_concurrent_jobs", config.max_concurrent_jobs}});
  });

  server.Post("/images", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string bytes = req.has_file("image") ? req.get_file_value("image").content : req.body;
    try {
      const Image image = decode_png(bytes);
      const auto id = artifacts.put(bytes, "image");
      send_json(res, 201, {{"image_id", id}, {"height", image.height}, {"width", image.width}});
    } catch (const Error& e) {
      send_error(res, 400, std::string("not a readable PNG image: ") + e.what());
    }
  });

  server.Post("/masks", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      std::string png;
      SpatialMask mask;
      if (req.get_header_value("Content-Type") == "image/png" || req.has_file("mask")) {
        png = req.has_file("mask") ? req.get_file_value("mask").content : req.body;
        mask = decode_mask_png(png);
      } else {
        nlohmann::json body;
        try {
          body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception&) {
          throw Error(ErrorCode::kInvalidRequest, "mask request must be a PNG or JSON");
        }
        const std::string image_id = body.value("image_id", "");
        const auto image_bytes = artifacts.get(image_id);
        if (!image_bytes) throw Error(ErrorCode::kLoad, "unknown image id " + image_id);
        if (!body.contains("spec")) throw Error(ErrorCode::kInvalidRequest, "mask request needs \"spec\"");
        const MaskSpec spec = mask_spec_from_json(body["spec"]);
        if (spec.kind == MaskSpec::Kind::kFile) {
          throw Error(ErrorCode::kInvalidRequest, "file masks are uploaded as PNG, not by server path");
        }
        if (!segmentation) throw Error(ErrorCode::kInvalidRequest, "no segmentation service configured");
        mask = resolve_mask(spec, decode_png(*image_bytes), segmentation.get());
        png = encode_mask_png(mask);
      }
      if (mask.empty_binary()) throw Error(ErrorCode::kEmptyMask, "mask has no foreground pixels");
      const auto id = artifacts.put(png, "mask");
      send_json(res, 201, {{"mask_id", id},
                           {"height", mask.height()},
                           {"width", mask.width()},
                           {"ones", mask.count_ones()},
                           {"url", "/masks/" + id}});
    } catch (const Error& e) {
      send_error(res, e.code() == ErrorCode::kLoad ? 404 : http_status_for(e), e.what());
    }
  });

  auto serve_blob = [this](const char* kind, const char* content_type) {
    return [this, kind, content_type](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      const auto k = artifacts.kind(id);
      const auto bytes = artifacts.get(id);
      if (!bytes || !k || *k != kind) return send_error(res, 404, std::string("unknown ") + kind + " id");
      res.set_content(*bytes, content_type);
    };
  };
  server.Get(R"(/images/([0-9a-f]{64}))", serve_blob("image", "image/png"));
  server.Get(R"(/masks/([0-9a-f]{64}))", serve_blob("mask", "image/png"));

  server.Post("/edits", [this](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      return send_error(res, 400, "edit request must be JSON");
    }
    EditRequest request;
    try {
      request = build_request(body);
    } catch (const Error& e) {
      return send_error(res, e.code() == ErrorCode::kLoad ? 404 : 400, e.what());
    }
    std::lock_guard lock(mutex);
    if (stopping) return send_error(res, 503, "service is shutting down");
    if (queued_count() >= config.queue_size) return send_error(res, 503, "job queue is full");
    EditJob job;
    job.sequence = next_sequence++;
    job.request = body;
    job.total_steps = request.steps;
    job.created_at = job.updated_at = iso_now();
    job.id = sha256_hex(body.dump() + "|" + std::to_string(job.sequence) + "|" + job.created_at).substr(0, 24);
    job_store.save(job);
    const std::string id = job.id;
    jobs[id] = std::move(job);
    push_event(jobs[id]);
    queue.push_back(id);
    queue_cv.notify_one();
    send_json(res, 202, {{"job_id", id}, {"state", "queued"}, {"url", "/edits/" + id}});
  });

  server.Get(R"(/edits/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mutex);
    const auto it = jobs.find(req.matches[1]);
    if (it == jobs.end()) return send_error(res, 404, "unknown job id");
    send_json(res, 200, it->second.to_json());
  });

  server.Get(R"(/edits/([0-9a-f]+)/result)", [this](const httplib::Request& req, httplib::Response& res) {
    std::string image_id;
    {
      std::lock_guard lock(mutex);
      const auto it = jobs.find(req.matches[1]);
      if (it == jobs.end()) return send_error(res, 404, "unknown job id");
      if (it->second.state != JobState::kDone) {
        return send_json(res, 409, {{"error", "job is not done"}, {"state", job_state_name(it->second.state)}});
      }
      image_id = it->second.result_image_id;
    }
    const auto bytes = artifacts.get(image_id);
    if (!bytes) return send_error(res, 500, "result artifact missing from the store");
    res.set_content(*bytes, "image/png");
  });

  server.Get(R"(/edits/([0-9a-f]+)/manifest)", [this](const httplib::Request& req, httplib::Response& res) {
    std::string manifest_id;
    {
      std::lock_guard lock(mutex);
      const auto it = jobs.find(req.matches[1]);
      if (it == jobs.end()) return send_error(res, 404, "unknown job id");
      if (it->second.state != JobState::kDone) return send_error(res, 409, "job is not done");
      manifest_id = it->second.result_manifest_id;
    }
    const auto bytes = artifacts.get(manifest_id);
    if (!bytes) return send_error(res, 500, "manifest artifact missing from the store");
    res.set_content(*bytes, "application/json");
  });

  server.Get(R"(/edits/([0-9a-f]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    {
      std::lock_guard lock(mutex);
      if (!jobs.count(id)) return send_error(res, 404, "unknown job id");
    }
    // Resume after the last event the client saw.
    auto next = std::make_shared<std::size_t>(0);
    if (req.has_header("Last-Event-ID")) {
      try {
        *next = std::stoul(req.get_header_value("Last-Event-ID"));
      } catch (const std::exception&) {
        *next = 0;
      }
    }
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("text/event-stream", [this, id, next](std::size_t, httplib::DataSink& sink) {
      std::unique_lock lock(mutex);
      events_cv.wait_for(lock, std::chrono::milliseconds(250),
                         [&] { return stopping || events[id].size() > *next; });
      const auto& list = events[id];
      std::string chunk;
      while (*next < list.size()) {
        const auto& e = list[*next];
        chunk += "id: " + std::to_string(e["seq"].get<std::size_t>()) + "\nevent: " + e["state"].get<std::string>() +
                 "\ndata: " + e.dump() + "\n\n";
        ++*next;
      }
      const bool finished = is_terminal(jobs.at(id).state) && *next >= list.size();
      const bool stop_now = stopping.load();
      lock.unlock();
      if (!chunk.empty() && !sink.write(chunk.data(), chunk.size())) return false;
      if (finished || stop_now) sink.done();
      return true;
    });
  });
}

JobService::JobService(ServiceConfig config, BackendFactory backend_factory,
                       std::shared_ptr<SegmentationClient> segmentation)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(backend_factory), std::move(segmentation))) {}

JobService::~JobService() { stop(); }

int JobService::start() {
  impl_->recover();
  impl_->routes();
  const int requested = impl_->config.port;
  if (requested == 0) {
    impl_->port = impl_->server.bind_to_any_port(impl_->config.host);
  } else {
    impl_->port = impl_->server.bind_to_port(impl_->config.host, requested) ? requested : -1;
  }
  if (impl_->port <= 0) {
    throw Error(ErrorCode::kTransport, "cannot bind " + impl_->config.host + ":" + std::to_string(requested));
  }
  for (int i = 0; i < impl_->config.max_concurrent_jobs; ++i) {
    impl_->workers.emplace_back([this] { impl_->worker_loop(); });
  }
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void JobService::wait() {
  std::unique_lock lock(impl_->stop_mutex);
  impl_->stop_cv.wait(lock, [this] { return impl_->stopped.load(); });
}

void JobService::stop() {
  if (!impl_ || impl_->stopped.exchange(true)) return;
  {
    std::lock_guard lock(impl_->mutex);
    impl_->stopping = true;
  }
  impl_->queue_cv.notify_all();
  impl_->events_cv.notify_all();
  impl_->server.stop();
  if (impl_->listener.joinable()) impl_->listener.join();
  for (auto& w : impl_->workers) {
    if (w.joinable()) w.join();
  }
  std::lock_guard lock(impl_->stop_mutex);
  impl_->stop_cv.notify_all();
}

std::string JobService::endpoint() const {
  return "http://" + impl_->config.host + ":" + std::to_string(impl_->port);
}

std::optional<EditJob> JobService::job(const std::string& id) const {
  std::lock_guard lock(impl_->mutex);
  const auto it = impl_->jobs.find(id);
  if (it == impl_->jobs.end()) return std::nullopt;
  return it->second;
}

int JobService::running_jobs() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->running;
}

int JobService::peak_running_jobs() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->peak_running;
}

}  // namespace maskedit
