// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "maskedit/image.hpp"
#include "maskedit/mask_input.hpp"
#include "maskedit/service.hpp"
#include "maskedit/toy_backend.hpp"
#include "test_util.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that breaks Eigen headers.
#include "httplib.h"

using namespace maskedit;
using nlohmann::json;

namespace {

BackendFactory toy_factory() {
  return [] { return std::make_unique<ToyBackend>(); };
}

ServiceConfig config_for(const std::string& name, std::size_t queue_size = 16) {
  ServiceConfig c;
  c.store_path = testutil::temp_dir(name);
  c.host = "127.0.0.1";
  c.port = 0;
  c.queue_size = queue_size;
  return c;
}

httplib::Client client_for(const JobService& service) {
  httplib::Client cli(service.endpoint());
  cli.set_read_timeout(120, 0);
  return cli;
}

std::string upload_image(httplib::Client& cli, const Image& image) {
  auto res = cli.Post("/images", encode_png(image), "image/png");
  EXPECT_TRUE(res);
  EXPECT_EQ(res->status, 201);
  return json::parse(res->body)["image_id"];
}

std::string upload_mask(httplib::Client& cli, const SpatialMask& mask) {
  auto res = cli.Post("/masks", encode_mask_png(mask), "image/png");
  EXPECT_TRUE(res);
  EXPECT_EQ(res->status, 201);
  return json::parse(res->body)["mask_id"];
}

std::pair<std::string, std::string> upload_pair(httplib::Client& cli) {
  return {upload_image(cli, testutil::synthetic_image()), upload_mask(cli, testutil::synthetic_mask())};
}

httplib::Result post_edit(httplib::Client& cli, const std::string& image_id, const std::string& mask_id,
                          json options = json::object()) {
  options["image_id"] = image_id;
  options["mask_id"] = mask_id;
  if (!options.contains("task")) options["task"] = "replace";
  if (!options.contains("prompt")) options["prompt"] = "a photo of a dog";
  return cli.Post("/edits", options.dump(), "application/json");
}

bool wait_for(const std::function<bool()>& pred, std::chrono::seconds limit = std::chrono::seconds(300)) {
  const auto deadline = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return false;
}

JobState state_of(const JobService& service, const std::string& id) { return service.job(id).value().state; }

}  // namespace

TEST(Service, HealthReportsConfiguration) {
  JobService service(config_for("svc_health"), toy_factory());
  service.start();
  auto cli = client_for(service);
  auto res = cli.Get("/healthz");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const auto body = json::parse(res->body);
  EXPECT_EQ(body["status"], "ok");
  EXPECT_EQ(body["backend"], "toy");
  EXPECT_EQ(body["max_concurrent_jobs"], 1);
}

TEST(Service, UploadedImagesAndMasksRoundTripBitExact) {
  JobService service(config_for("svc_blobs"), toy_factory());
  service.start();
  auto cli = client_for(service);
  const std::string image_png = encode_png(testutil::synthetic_image(20, 12));
  const std::string mask_png = encode_mask_png(testutil::synthetic_mask(20, 12));
  const auto image_id = upload_image(cli, testutil::synthetic_image(20, 12));
  const auto mask_id = upload_mask(cli, testutil::synthetic_mask(20, 12));
  EXPECT_EQ(image_id.size(), 64u);
  auto got_image = cli.Get("/images/" + image_id);
  ASSERT_TRUE(got_image);
  EXPECT_EQ(got_image->body, image_png);
  auto got_mask = cli.Get("/masks/" + mask_id);
  ASSERT_TRUE(got_mask);
  EXPECT_EQ(got_mask->body, mask_png);
  EXPECT_EQ(upload_image(cli, testutil::synthetic_image(20, 12)), image_id);  // content addressed
  // An image id is not a mask id.
  EXPECT_EQ(cli.Get("/masks/" + image_id)->status, 404);
}

TEST(Service, ClickMasksFromTheStubSegmenterRoundTrip) {
  StubSegmentationServer stub;
  stub.set_click_radius(3);
  stub.start();
  JobService service(config_for("svc_clicks"), toy_factory(), std::make_shared<HttpSegmentationClient>(stub.endpoint()));
  service.start();
  auto cli = client_for(service);
  const auto image_id = upload_image(cli, testutil::synthetic_image(24, 24));
  const json spec = {{"kind", "clicks"}, {"clicks", json::array({json::array({9, 11, true})})}};
  auto res = cli.Post("/masks", json{{"image_id", image_id}, {"spec", spec}}.dump(), "application/json");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 201) << res->body;
  const auto body = json::parse(res->body);
  const SpatialMask expect = StubSegmentationServer::stub_mask(24, 24, MaskSpec::from_clicks({{9, 11, true}}), 3);
  EXPECT_EQ(body["ones"], expect.count_ones());
  auto png = cli.Get(body["url"].get<std::string>());
  ASSERT_TRUE(png);
  EXPECT_EQ(decode_mask_png(png->body), expect);
  EXPECT_EQ(png->body, encode_mask_png(expect));
}

TEST(Service, ValidationAndUnknownIds) {
  JobService service(config_for("svc_errors"), toy_factory());
  service.start();
  auto cli = client_for(service);
  const auto [image_id, mask_id] = upload_pair(cli);
  EXPECT_EQ(cli.Post("/images", "not a png", "image/png")->status, 400);
  EXPECT_EQ(cli.Post("/masks", encode_mask_png(SpatialMask::zeros(8, 8)), "image/png")->status, 400);
  EXPECT_EQ(cli.Post("/edits", "{", "application/json")->status, 400);
  EXPECT_EQ(post_edit(cli, image_id, mask_id, {{"steps", 0}})->status, 400);
  EXPECT_EQ(post_edit(cli, image_id, mask_id, {{"colour", "red"}})->status, 400);
  EXPECT_EQ(post_edit(cli, std::string(64, 'a'), mask_id)->status, 404);
  const auto other_mask = upload_mask(cli, testutil::synthetic_mask(8, 8));
  EXPECT_EQ(post_edit(cli, image_id, other_mask)->status, 400);
  EXPECT_EQ(cli.Get("/edits/0123abcd")->status, 404);
  EXPECT_EQ(cli.Get("/edits/0123abcd/result")->status, 404);
  EXPECT_EQ(cli.Get("/edits/0123abcd/events")->status, 404);
  EXPECT_EQ(cli.Get("/images/" + std::string(64, 'b'))->status, 404);
}

TEST(Service, ResultBeforeDoneIsConflictThenStreamsEveryStep) {
  JobService service(config_for("svc_stream"), toy_factory());
  service.start();
  auto cli = client_for(service);
  const auto [image_id, mask_id] = upload_pair(cli);
  auto posted = post_edit(cli, image_id, mask_id);
  ASSERT_TRUE(posted);
  ASSERT_EQ(posted->status, 202) << posted->body;
  const std::string id = json::parse(posted->body)["job_id"];
  EXPECT_EQ(cli.Get("/edits/" + id + "/result")->status, 409);
  EXPECT_EQ(cli.Get("/edits/" + id + "/manifest")->status, 409);

  std::string stream;
  auto events = cli.Get("/edits/" + id + "/events", [&](const char* data, std::size_t n) {
    stream.append(data, n);
    return true;
  });
  ASSERT_TRUE(events);
  std::vector<int> steps;
  std::vector<std::string> states;
  std::size_t pos = 0;
  while ((pos = stream.find("data: ", pos)) != std::string::npos) {
    const auto end = stream.find('\n', pos);
    const auto e = json::parse(stream.substr(pos + 6, end - pos - 6));
    states.push_back(e["state"]);
    if (e["state"] == "denoising") steps.push_back(e["step"]);
    pos = end;
  }
  std::vector<int> expect(50);
  for (int k = 0; k < 50; ++k) expect[static_cast<std::size_t>(k)] = k + 1;
  EXPECT_EQ(steps, expect);
  ASSERT_FALSE(states.empty());
  EXPECT_EQ(states.front(), "queued");
  EXPECT_EQ(states.back(), "done");

  auto status = cli.Get("/edits/" + id);
  EXPECT_EQ(json::parse(status->body)["state"], "done");
  auto result = cli.Get("/edits/" + id + "/result");
  ASSERT_EQ(result->status, 200);
  const Image edited = decode_png(result->body);
  EXPECT_EQ(edited.height, 16);
  auto manifest = cli.Get("/edits/" + id + "/manifest");
  ASSERT_EQ(manifest->status, 200);
  EXPECT_TRUE(json::parse(manifest->body).is_object());

  // Reconnecting with Last-Event-ID replays only what follows.
  std::string tail;
  httplib::Headers headers{{"Last-Event-ID", std::to_string(states.size() - 1)}};
  cli.Get("/edits/" + id + "/events", headers, [&](const char* data, std::size_t n) {
    tail.append(data, n);
    return true;
  });
  EXPECT_EQ(tail.find("data: "), tail.rfind("data: "));
  EXPECT_NE(tail.find("\"done\""), std::string::npos);
}

TEST(Service, QueueFullIsServiceUnavailable) {
  JobService service(config_for("svc_full", 1), toy_factory());
  service.start();
  auto cli = client_for(service);
  const auto [image_id, mask_id] = upload_pair(cli);
  std::vector<int> codes;
  for (int i = 0; i < 3; ++i) codes.push_back(post_edit(cli, image_id, mask_id, {{"seed", i}})->status);
  EXPECT_EQ(codes[0], 202);
  EXPECT_EQ(codes[2], 503);
}

TEST(Service, AtMostOnePipelineRunsAndJobsFinishInOrder) {
  JobService service(config_for("svc_serial"), toy_factory());
  service.start();
  auto cli = client_for(service);
  const auto [image_id, mask_id] = upload_pair(cli);
  std::vector<std::string> ids;
  for (int i = 0; i < 3; ++i) ids.push_back(json::parse(post_edit(cli, image_id, mask_id, {{"steps", 10}, {"seed", i}})->body)["job_id"]);
  int observed_peak = 0;
  ASSERT_TRUE(wait_for([&] {
    observed_peak = std::max(observed_peak, service.running_jobs());
    // FIFO: a later job never starts before an earlier one finishes.
    for (std::size_t i = 1; i < ids.size(); ++i)
      if (state_of(service, ids[i]) != JobState::kQueued) EXPECT_EQ(state_of(service, ids[i - 1]), JobState::kDone);
    return state_of(service, ids.back()) == JobState::kDone;
  }));
  EXPECT_LE(observed_peak, 1);
  EXPECT_EQ(service.peak_running_jobs(), 1);
}

TEST(Service, JobsSurviveARestart) {
  const ServiceConfig config = config_for("svc_restart");
  std::string interrupted, waiting, done;
  {
    JobService service(config, toy_factory());
    service.start();
    auto cli = client_for(service);
    const auto [image_id, mask_id] = upload_pair(cli);
    done = json::parse(post_edit(cli, image_id, mask_id, {{"steps", 10}})->body)["job_id"];
    ASSERT_TRUE(wait_for([&] { return state_of(service, done) == JobState::kDone; }));
    interrupted = json::parse(post_edit(cli, image_id, mask_id, {{"seed", 1}, {"steps", 200}})->body)["job_id"];
    waiting = json::parse(post_edit(cli, image_id, mask_id, {{"seed", 2}, {"steps", 10}})->body)["job_id"];
    ASSERT_TRUE(wait_for([&] { return state_of(service, interrupted) == JobState::kDenoising; }));
    service.stop();
    EXPECT_EQ(state_of(service, waiting), JobState::kQueued);
  }
  JobService revived(config, toy_factory());
  revived.start();
  EXPECT_EQ(state_of(revived, done), JobState::kDone);
  const EditJob failed = revived.job(interrupted).value();
  EXPECT_EQ(failed.state, JobState::kFailed);
  EXPECT_NE(failed.reason.find("restart"), std::string::npos);
  ASSERT_TRUE(wait_for([&] { return state_of(revived, waiting) == JobState::kDone; }));
  auto cli = client_for(revived);
  EXPECT_EQ(cli.Get("/edits/" + done + "/result")->status, 200);
  EXPECT_EQ(cli.Get("/edits/" + waiting + "/result")->status, 200);
  EXPECT_GT(revived.job(waiting)->sequence, revived.job(interrupted)->sequence);
}

TEST(JobRecord, JsonRoundTrip) {
  EditJob job;
  job.id = "abc";
  job.sequence = 7;
  job.request = {{"prompt", "x"}};
  job.state = JobState::kFailed;
  job.step = 12;
  job.total_steps = 50;
  job.reason = "boom";
  job.created_at = "2026-01-01T00:00:00Z";
  job.updated_at = "2026-01-01T00:00:01Z";
  const EditJob back = EditJob::from_json(job.to_json());
  EXPECT_EQ(back.to_json(), job.to_json());
  for (auto s : {JobState::kQueued, JobState::kInverting, JobState::kDenoising, JobState::kDecoding, JobState::kDone,
                 JobState::kFailed})
    EXPECT_EQ(parse_job_state(job_state_name(s)), s);
  EXPECT_FALSE(parse_job_state("sleeping"));
  EXPECT_TRUE(is_terminal(JobState::kDone));
  EXPECT_FALSE(is_terminal(JobState::kDecoding));
}
