// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fcntl.h>

#include <chrono>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "maskedit/cli.hpp"
#include "maskedit/config.hpp"
#include "maskedit/evaluation.hpp"
#include "maskedit/image.hpp"
#include "maskedit/mask.hpp"
#include "test_util.hpp"

using namespace maskedit;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Writes the synthetic scene and its mask; returns {image, mask} paths.
std::pair<fs::path, fs::path> write_inputs(const fs::path& dir) {
  save_png(testutil::synthetic_image(), dir / "in.png");
  save_mask_png(testutil::synthetic_mask(), dir / "mask.png");
  return {dir / "in.png", dir / "mask.png"};
}

nlohmann::json without_timestamps(nlohmann::json manifest) {
  manifest.erase("timing");
  manifest.erase("created_at");
  return manifest;
}

fs::path report_csv(const fs::path& report_dir) {
  for (const auto& e : fs::directory_iterator(report_dir))
    if (e.path().extension() == ".csv") return e.path();
  return {};
}

#ifdef MASKEDIT_CLI_PATH
pid_t spawn_cli(const std::vector<std::string>& args) {
  const pid_t pid = fork();
  if (pid == 0) {
    const int null = ::open("/dev/null", O_WRONLY);
    dup2(null, 1);
    dup2(null, 2);
    std::vector<char*> argv{const_cast<char*>(MASKEDIT_CLI_PATH)};
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    execv(MASKEDIT_CLI_PATH, argv.data());
    _exit(127);
  }
  return pid;
}

int wait_exit(pid_t pid) {
  int status = 0;
  waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
#endif

}  // namespace

TEST(Cli, MissingPromptIsAUsageErrorNamingTheFlag) {
  const auto dir = testutil::temp_dir("cli_noprompt");
  const auto [image, mask] = write_inputs(dir);
  const CliRun r = cli({"edit", "--image", image, "--mask", mask, "--task", "replace", "--out", dir / "o.png"});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("--prompt"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "o.png"));
}

TEST(Cli, UsageAndInputErrorsExitTwo) {
  const auto dir = testutil::temp_dir("cli_usage");
  const auto [image, mask] = write_inputs(dir);
  EXPECT_EQ(cli({}).code, kExitValidation);
  EXPECT_EQ(cli({"edit", "--image", image}).code, kExitValidation);
  EXPECT_EQ(cli({"edit", "--image", image, "--mask", mask, "--prompt", "a dog", "--task", "paint", "--out",
                 dir / "o.png"}).code,
            kExitValidation);
  EXPECT_EQ(cli({"edit", "--image", image, "--mask", mask, "--prompt", "a dog", "--steps", "3", "--out",
                 dir / "o.png"}).code,
            kExitValidation);
  EXPECT_EQ(cli({"edit", "--image", dir / "missing.png", "--mask", mask, "--prompt", "a dog", "--out",
                 dir / "o.png"}).code,
            kExitValidation);
  save_mask_png(SpatialMask::zeros(16, 16), dir / "empty.png");
  EXPECT_EQ(cli({"edit", "--image", image, "--mask", dir / "empty.png", "--prompt", "a dog", "--out", dir / "o.png"})
                .code,
            kExitValidation);
  EXPECT_EQ(cli({"bench", "--dataset", dir / "nowhere", "--report", dir / "r.txt"}).code, kExitValidation);
}

TEST(Cli, RemoveWritesImageAndAllZeroTargetMasks) {
  const auto dir = testutil::temp_dir("cli_remove");
  const auto [image, mask] = write_inputs(dir);
  const CliRun r = cli({"edit", "--image", image, "--mask", mask, "--task", "remove", "--prompt", "an empty room", "--out",
                     dir / "out.png"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const Image out = load_png(dir / "out.png");
  EXPECT_EQ(out.height, 16);
  const auto manifest = read_json_file(dir / "out.json");
  ASSERT_EQ(manifest["target_masks"].size(), 50u);
  for (const auto& m : manifest["target_masks"]) EXPECT_EQ(m["mask_ones"], 0);
  EXPECT_EQ(manifest["request"]["task"], "remove");
  EXPECT_EQ(manifest["forward_passes"], 150);
}

TEST(Cli, IdenticalRunsAreByteIdentical) {
  const auto dir = testutil::temp_dir("cli_determinism");
  const auto [image, mask] = write_inputs(dir);
  for (const char* sub : {"a", "b"}) {
    const CliRun r = cli({"edit", "--image", image, "--mask", mask, "--prompt", "a photo of a dog", "--object-word", "dog",
                       "--seed", "11", "--out", dir / sub / "out.png"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
  }
  EXPECT_EQ(slurp(dir / "a" / "out.png"), slurp(dir / "b" / "out.png"));
  const auto ma = read_json_file(dir / "a" / "out.json");
  const auto mb = read_json_file(dir / "b" / "out.json");
  EXPECT_EQ(without_timestamps(ma), without_timestamps(mb));
  for (const auto& e : fs::directory_iterator(dir / "a" / "out_masks"))
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / "out_masks" / e.path().filename())) << e.path();
}

TEST(Cli, ConfigFileSuppliesOptionsAndFlagsOverride) {
  const auto dir = testutil::temp_dir("cli_config");
  const auto [image, mask] = write_inputs(dir);
  std::ofstream(dir / "opts.json") << R"({"task": "pose", "prompt": "a dog jumping", "steps": 20, "seed": 4})";
  const CliRun r = cli({"edit", "--image", image, "--mask", mask, "--config", dir / "opts.json", "--steps", "10", "--out",
                     dir / "out.png"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto manifest = read_json_file(dir / "out.json");
  EXPECT_EQ(manifest["request"]["task"], "pose");
  EXPECT_EQ(manifest["request"]["steps"], 10);
  EXPECT_EQ(manifest["request"]["seed"], 4);
  std::ofstream(dir / "bad.json") << R"({"stepz": 20})";
  EXPECT_EQ(cli({"edit", "--image", image, "--mask", mask, "--config", dir / "bad.json", "--prompt", "x", "--out",
                 dir / "o2.png"}).code,
            kExitValidation);
}

TEST(CliBench, LimitZeroIsAnEmptyReportError) {
  const auto dir = testutil::temp_dir("bench_zero");
  const CliRun r = cli({"bench", "--dataset", testutil::micro_dir(), "--limit", "0", "--report", dir / "report.txt"});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("empty-report"), std::string::npos) << r.err;
}

TEST(CliBench, MicroSubsetWritesSixRecordsAndResumes) {
  const auto dir = testutil::temp_dir("bench_micro");
  const std::vector<std::string> base{"bench", "--dataset", testutil::micro_dir(), "--steps", "10", "--report",
                                      dir / "report.txt"};
  auto with = [&](std::vector<std::string> extra) {
    auto a = base;
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  };
  CliRun partial = cli(with({"--max-new", "2"}));
  ASSERT_EQ(partial.code, kExitOk) << partial.err;
  EXPECT_NE(partial.out.find("rerun to resume"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "report.txt"));
  CliRun rest = cli(base);
  ASSERT_EQ(rest.code, kExitOk) << rest.err;
  // Only the four samples without checkpoints ran the second time.
  int fresh = 0;
  for (std::size_t p = 0; (p = rest.out.find(" done in ", p)) != std::string::npos; ++p) ++fresh;
  EXPECT_EQ(fresh, 4);
  const auto records = load_report_csv(report_csv(dir));
  ASSERT_EQ(records.size(), 6u);
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.sample_id);
  EXPECT_EQ(ids.size(), 6u);
  EXPECT_NE(slurp(dir / "report.txt").find("29.26"), std::string::npos);
}

#ifdef MASKEDIT_CLI_PATH
TEST(CliBench, KilledRunResumesWithoutDuplicates) {
  const auto dir = testutil::temp_dir("bench_kill");
  const std::vector<std::string> args{"bench", "--dataset", testutil::micro_dir(), "--steps", "60", "--report",
                                      dir / "report.txt"};
  const pid_t pid = spawn_cli(args);
  ASSERT_GT(pid, 0);
  const auto ckpt_dir = dir / "report_checkpoints";
  auto checkpoints = [&] {
    int n = 0;
    if (fs::exists(ckpt_dir))
      for (const auto& e : fs::directory_iterator(ckpt_dir)) n += e.path().extension() == ".json";
    return n;
  };
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(300);
  while (checkpoints() < 2 && std::chrono::steady_clock::now() < deadline)
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  kill(pid, SIGKILL);
  const int killed_exit = wait_exit(pid);
  const int at_kill = checkpoints();
  ASSERT_GE(at_kill, 2);
  if (killed_exit == -1) {
    EXPECT_LT(at_kill, 6);
    EXPECT_FALSE(fs::exists(dir / "report.txt"));
  }
  ASSERT_EQ(wait_exit(spawn_cli(args)), 0);
  const auto records = load_report_csv(report_csv(dir));
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.sample_id);
  EXPECT_EQ(records.size(), 6u);
  EXPECT_EQ(ids.size(), 6u);
}
#endif
