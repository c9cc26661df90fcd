// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/mask_input.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include "httplib.h"
#include "maskedit/error.hpp"
#include "maskedit/hashing.hpp"

namespace maskedit {

MaskSpec MaskSpec::from_file(std::filesystem::path path) {
  MaskSpec spec;
  spec.kind = Kind::kFile;
  spec.file = std::move(path);
  return spec;
}

MaskSpec MaskSpec::from_clicks(std::vector<ClickPoint> clicks) {
  MaskSpec spec;
  spec.kind = Kind::kClicks;
  spec.clicks = std::move(clicks);
  return spec;
}

MaskSpec MaskSpec::from_phrase(std::string phrase) {
  MaskSpec spec;
  spec.kind = Kind::kTextPhrase;
  spec.phrase = std::move(phrase);
  return spec;
}

MaskSpec MaskSpec::from_mask(SpatialMask mask) {
  MaskSpec spec;
  spec.kind = Kind::kInline;
  spec.mask = std::move(mask);
  return spec;
}

void MaskSpec::validate(int image_height, int image_width) const {
  switch (kind) {
    case Kind::kFile:
      if (file.empty()) throw Error(ErrorCode::kInvalidRequest, "mask file path is empty");
      break;
    case Kind::kClicks:
      if (clicks.empty()) throw Error(ErrorCode::kInvalidRequest, "no click points given");
      if (std::none_of(clicks.begin(), clicks.end(), [](const ClickPoint& c) { return c.positive; })) {
        throw Error(ErrorCode::kInvalidRequest, "at least one positive click is required");
      }
      for (const auto& c : clicks) {
        if (c.x < 0 || c.y < 0 || c.x >= image_width || c.y >= image_height) {
          throw Error(ErrorCode::kInvalidRequest, "click (" + std::to_string(c.x) + ", " +
                                                      std::to_string(c.y) + ") is outside the image");
        }
      }
      break;
    case Kind::kTextPhrase:
      if (phrase.find_first_not_of(" \t\n") == std::string::npos) {
        throw Error(ErrorCode::kInvalidRequest, "mask phrase is empty");
      }
      break;
    case Kind::kInline:
      if (!mask) throw Error(ErrorCode::kInvalidRequest, "inline mask spec carries no mask");
      break;
  }
}

nlohmann::json MaskSpec::to_wire() const {
  if (kind == Kind::kClicks) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& c : clicks) points.push_back({{"x", c.x}, {"y", c.y}, {"positive", c.positive}});
    return {{"clicks", points}};
  }
  if (kind == Kind::kTextPhrase) return {{"phrase", phrase}};
  throw Error(ErrorCode::kInvalidRequest, "only clicks and phrases are sent to the segmentation service");
}

std::string MaskSpec::describe() const {
  switch (kind) {
    case Kind::kFile: return "file:" + file.string();
    case Kind::kClicks: return "clicks:" + to_wire().dump();
    case Kind::kTextPhrase: return "phrase:" + phrase;
    case Kind::kInline: return "inline";
  }
  return "unknown";
}

RunLengthMask RunLengthMask::encode(const SpatialMask& mask) {
  RunLengthMask rle;
  rle.height = mask.height();
  rle.width = mask.width();
  const auto bits = mask.binarized();
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (auto b : bits) {
    if (b != current) {
      rle.counts.push_back(run);
      run = 0;
      current = b;
    }
    ++run;
  }
  rle.counts.push_back(run);
  return rle;
}

SpatialMask RunLengthMask::decode() const {
  if (height < 1 || width < 1) throw Error(ErrorCode::kTransport, "RLE mask has no size");
  const auto total = static_cast<std::size_t>(height) * width;
  std::vector<std::uint8_t> bits;
  bits.reserve(total);
  std::uint8_t value = 0;
  for (auto run : counts) {
    if (bits.size() + run > total) throw Error(ErrorCode::kTransport, "RLE runs overflow the mask");
    bits.insert(bits.end(), run, value);
    value ^= 1;
  }
  if (bits.size() != total) throw Error(ErrorCode::kTransport, "RLE runs do not cover the mask");
  return SpatialMask::from_bits(height, width, bits);
}

nlohmann::json RunLengthMask::to_json() const {
  return {{"height", height}, {"width", width}, {"counts", counts}};
}

RunLengthMask RunLengthMask::from_json(const nlohmann::json& j) {
  try {
    RunLengthMask rle;
    rle.height = j.at("height").get<int>();
    rle.width = j.at("width").get<int>();
    rle.counts = j.at("counts").get<std::vector<std::uint32_t>>();
    return rle;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kTransport, std::string("malformed RLE mask: ") + e.what());
  }
}

HttpSegmentationClient::HttpSegmentationClient(std::string endpoint, RetryPolicy retry,
                                               int timeout_seconds)
    : endpoint_(std::move(endpoint)), retry_(retry), timeout_seconds_(timeout_seconds) {}

SegmentationResponse HttpSegmentationClient::segment(const std::string& image_png,
                                                     const MaskSpec& spec) {
  const httplib::MultipartFormDataItems items{
      {"image", image_png, "image.png", "image/png"},
      {"spec", spec.to_wire().dump(), "", "application/json"},
  };
  std::string last_error = "no attempt made";
  int backoff = retry_.initial_backoff_ms;
  for (int attempt = 0; attempt < std::max(1, retry_.attempts); ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff *= 2;
    }
    httplib::Client client(endpoint_);
    client.set_connection_timeout(timeout_seconds_);
    client.set_read_timeout(timeout_seconds_);
    auto res = client.Post("/segment", items);
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(ErrorCode::kTransport, "segmentation service rejected the request: HTTP " +
                                             std::to_string(res->status) + " " + res->body);
    }
    try {
      const auto body = nlohmann::json::parse(res->body);
      return {RunLengthMask::from_json(body.at("mask")).decode(), body.value("confidence", 0.0)};
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kTransport, std::string("malformed segmentation response: ") + e.what());
    }
  }
  throw Error(ErrorCode::kTransport, "segmentation service at " + endpoint_ + " unreachable after " +
                                         std::to_string(std::max(1, retry_.attempts)) +
                                         " attempts: " + last_error);
}

CachingSegmentationClient::CachingSegmentationClient(std::shared_ptr<SegmentationClient> upstream)
    : upstream_(std::move(upstream)) {}

SegmentationResponse CachingSegmentationClient::segment(const std::string& image_png,
                                                        const MaskSpec& spec) {
  const std::string key = sha256_hex(image_png) + ":" + sha256_hex(spec.to_wire().dump());
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  auto response = upstream_->segment(image_png, spec);
  std::lock_guard lock(mutex_);
  ++upstream_calls_;
  return cache_.emplace(key, std::move(response)).first->second;
}

std::size_t CachingSegmentationClient::upstream_calls() const {
  std::lock_guard lock(mutex_);
  return upstream_calls_;
}

SpatialMask resolve_mask(const MaskSpec& spec, const Image& image, SegmentationClient* client) {
  spec.validate(image.height, image.width);
  SpatialMask mask;
  switch (spec.kind) {
    case MaskSpec::Kind::kFile:
    case MaskSpec::Kind::kInline:
      mask = spec.kind == MaskSpec::Kind::kFile ? load_mask_png(spec.file) : spec.mask->binary();
      if (mask.height() != image.height || mask.width() != image.width) {
        throw Error(ErrorCode::kInvalidMask,
                    "mask is " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                        " but the image is " + std::to_string(image.height) + "x" +
                        std::to_string(image.width));
      }
      break;
    case MaskSpec::Kind::kClicks:
    case MaskSpec::Kind::kTextPhrase: {
      if (client == nullptr) {
        throw Error(ErrorCode::kInvalidRequest,
                    "click and phrase masks need a segmentation service endpoint");
      }
      auto response = client->segment(encode_png(image), spec);
      mask = resize_mask(response.mask, image.height, image.width).binary();
      break;
    }
  }
  if (mask.empty_binary()) throw EmptyMaskError("resolved source mask is empty (" + spec.describe() + ")");
  return mask;
}

struct StubSegmentationServer::Impl {
  httplib::Server server;
  std::thread thread;
  std::mutex mutex;
  std::optional<nlohmann::json> fixture;
  std::atomic<std::size_t> served{0};
  int port = 0;
};

StubSegmentationServer::StubSegmentationServer() : impl_(std::make_unique<Impl>()) {
  impl_->server.Post("/segment", [this](const httplib::Request& req, httplib::Response& res) {
    ++impl_->served;
    {
      std::lock_guard lock(impl_->mutex);
      if (impl_->fixture) {
        res.set_content(impl_->fixture->dump(), "application/json");
        return;
      }
    }
    if (!req.has_file("image") || !req.has_file("spec")) {
      res.status = 400;
      res.set_content(R"({"error":"image and spec parts are required"})", "application/json");
      return;
    }
    try {
      const Image image = decode_png(req.get_file_value("image").content, 3);
      const auto wire = nlohmann::json::parse(req.get_file_value("spec").content);
      MaskSpec spec;
      if (wire.contains("clicks")) {
        std::vector<ClickPoint> clicks;
        for (const auto& c : wire.at("clicks")) {
          clicks.push_back({c.at("x").get<int>(), c.at("y").get<int>(), c.value("positive", true)});
        }
        spec = MaskSpec::from_clicks(std::move(clicks));
      } else {
        spec = MaskSpec::from_phrase(wire.at("phrase").get<std::string>());
      }
      const auto mask = stub_mask(image.height, image.width, spec, click_radius_);
      const nlohmann::json body{{"mask", RunLengthMask::encode(mask).to_json()}, {"confidence", 1.0}};
      res.set_content(body.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  });
}

StubSegmentationServer::~StubSegmentationServer() { stop(); }

void StubSegmentationServer::set_fixture(nlohmann::json response) {
  std::lock_guard lock(impl_->mutex);
  impl_->fixture = std::move(response);
}

int StubSegmentationServer::start(int port) {
  impl_->port = port == 0 ? impl_->server.bind_to_any_port("127.0.0.1")
                          : (impl_->server.bind_to_port("127.0.0.1", port) ? port : -1);
  if (impl_->port <= 0) throw Error(ErrorCode::kTransport, "stub segmentation server cannot bind");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void StubSegmentationServer::serve_forever(const std::string& host, int port) {
  impl_->port = port;
  if (!impl_->server.listen(host, port)) {
    throw Error(ErrorCode::kTransport, "stub segmentation server cannot listen on " + host + ":" +
                                           std::to_string(port));
  }
}

void StubSegmentationServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string StubSegmentationServer::endpoint() const {
  return "http://127.0.0.1:" + std::to_string(impl_->port);
}

std::size_t StubSegmentationServer::requests_served() const { return impl_->served.load(); }

SpatialMask StubSegmentationServer::stub_mask(int height, int width, const MaskSpec& spec,
                                              int click_radius) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(height) * width, 0);
  if (spec.kind == MaskSpec::Kind::kClicks) {
    const int r2 = click_radius * click_radius;
    for (bool positive : {true, false}) {
      for (const auto& c : spec.clicks) {
        if (c.positive != positive) continue;
        for (int y = 0; y < height; ++y)
          for (int x = 0; x < width; ++x)
            if ((y - c.y) * (y - c.y) + (x - c.x) * (x - c.x) <= r2) {
              bits[static_cast<std::size_t>(y) * width + x] = positive ? 1 : 0;
            }
      }
    }
  } else {
    const double cy = (height - 1) / 2.0;
    const double cx = (width - 1) / 2.0;
    const double ry = height / 4.0;
    const double rx = width / 4.0;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double dy = (y - cy) / ry;
        const double dx = (x - cx) / rx;
        bits[static_cast<std::size_t>(y) * width + x] = dy * dy + dx * dx <= 1.0;
      }
  }
  return SpatialMask::from_bits(height, width, bits);
}

}  // namespace maskedit
