// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <thread>

#include "CLI11.hpp"
#include "maskedit/config.hpp"
#include "maskedit/error.hpp"
#include "maskedit/evaluation.hpp"
#include "maskedit/hashing.hpp"
#include "maskedit/mask_input.hpp"
#include "maskedit/pipeline.hpp"
#include "maskedit/service.hpp"
#include "maskedit/toy_backend.hpp"

namespace maskedit {
namespace {

// Failures caused by the caller's inputs rather than by the pipeline itself.
bool is_validation(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidRequest:
    case ErrorCode::kInvalidMask:
    case ErrorCode::kEmptyMask:
    case ErrorCode::kLoad:
    case ErrorCode::kEmptyReport:
    case ErrorCode::kPolicy:
      return true;
    default:
      return false;
  }
}

struct ValidationFailure {
  std::string message;
};

[[noreturn]] void usage_error(const std::string& message) { throw ValidationFailure{message}; }

std::unique_ptr<Backend> make_backend(const std::string& name, std::uint64_t toy_seed) {
  if (name == "toy") {
    ToyBackendConfig cfg;
    cfg.seed = toy_seed;
    return std::make_unique<ToyBackend>(cfg);
  }
  if (name == "sd15") {
    usage_error("the sd15 backend runs through the Python package: python -m maskedit edit --backend sd15 ...");
  }
  usage_error("unknown backend '" + name + "' (toy, sd15)");
}

struct CommonEditFlags {
  std::string task;
  std::string prompt;
  std::string object_word;
  double guidance = 7.5;
  int steps = 50;
  std::uint64_t seed = 0;
  std::string config;
  std::string backend = "toy";
  std::uint64_t toy_seed = 7;
  std::string segmentation_endpoint;
  std::string trace_cache;
  bool no_edit_control = false;
  bool disable_preservation = false;
  bool disable_localization = false;

  CLI::Option* task_opt = nullptr;
  CLI::Option* prompt_opt = nullptr;
  CLI::Option* object_opt = nullptr;
  CLI::Option* guidance_opt = nullptr;
  CLI::Option* steps_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* backend_opt = nullptr;
  CLI::Option* segmentation_opt = nullptr;

  void add(CLI::App* app, bool with_task_and_prompt) {
    if (with_task_and_prompt) {
      task_opt = app->add_option("--task", task, "replace, pose, background, remove or region")
                     ->check(CLI::IsMember({"replace", "pose", "background", "remove", "region"}));
      prompt_opt = app->add_option("--prompt", prompt, "target prompt");
      object_opt = app->add_option("--object-word", object_word, "word of the prompt naming the new object");
    }
    guidance_opt = app->add_option("--guidance", guidance, "classifier-free guidance scale (default 7.5)");
    steps_opt = app->add_option("--steps", steps, "DDIM steps (default 50)");
    seed_opt = app->add_option("--seed", seed, "seed of the normal-attention mixing stream");
    app->add_option("--config", config, "JSON file of edit options");
    backend_opt = app->add_option("--backend", backend, "toy (sd15 runs through python -m maskedit)");
    app->add_option("--toy-seed", toy_seed, "weight seed of the toy backend");
    segmentation_opt = app->add_option("--segmentation-endpoint", segmentation_endpoint,
                                       "promptable segmentation service, e.g. http://127.0.0.1:8901");
    app->add_option("--trace-cache", trace_cache, "directory for reusable inversion traces");
    app->add_flag("--no-edit-control", no_edit_control, "reconstruction control run");
    app->add_flag("--disable-preservation", disable_preservation, "turn the masked self-attention off");
    app->add_flag("--disable-localization", disable_localization, "turn the partitioned cross-attention off");
  }

  // Config file first, explicit flags on top.
  void apply(EditRequest& r) {
    if (!config.empty()) {
      nlohmann::json j = read_json_file(config);
      for (const char* key : {"backend", "segmentation_endpoint", "trace_cache", "toy_seed"}) {
        if (!j.contains(key)) continue;
        if (std::string(key) == "backend" && backend_opt->count() == 0) backend = j[key].get<std::string>();
        if (std::string(key) == "segmentation_endpoint" && segmentation_opt->count() == 0) {
          segmentation_endpoint = j[key].get<std::string>();
        }
        if (std::string(key) == "trace_cache" && trace_cache.empty()) trace_cache = j[key].get<std::string>();
        if (std::string(key) == "toy_seed") toy_seed = j[key].get<std::uint64_t>();
        j.erase(key);
      }
      apply_edit_options(j, r);
    }
    if (task_opt && task_opt->count()) {
      const bool explicit_retain = r.schedule.retain_object != default_retain_object(r.task);
      r.task = *parse_task_kind(task);
      if (!explicit_retain) r.schedule.retain_object = default_retain_object(r.task);
    }
    if (prompt_opt && prompt_opt->count()) r.target_prompt = prompt;
    if (object_opt && object_opt->count()) r.object_word = object_word;
    if (guidance_opt->count()) r.guidance_scale = guidance;
    if (steps_opt->count()) r.steps = steps;
    if (seed_opt->count()) r.seed = seed;
    if (no_edit_control) r.no_edit_control = true;
    if (disable_preservation) r.controllers.preservation = false;
    if (disable_localization) r.controllers.localization = false;
  }
};

int run_edit(CommonEditFlags& f, const std::string& image_path, const std::string& mask_path,
             const std::string& clicks, const std::string& mask_text, const std::string& out_path,
             std::string manifest_path, std::ostream& out) {
  EditRequest request;
  request.schedule.retain_object = default_retain_object(request.task);
  f.apply(request);
  const int mask_sources = !mask_path.empty() + !clicks.empty() + !mask_text.empty();
  if (mask_sources != 1) usage_error("give exactly one of --mask, --clicks or --mask-text");
  const bool blank_prompt = request.target_prompt.find_first_not_of(" \t\n") == std::string::npos;
  if (blank_prompt && request.task != TaskKind::kRemoveObject && !request.no_edit_control) {
    usage_error(std::string("--prompt is required for --task ") + task_kind_name(request.task));
  }

  auto backend = make_backend(f.backend, f.toy_seed);
  request.image = load_png(image_path);
  request.image_ref = image_path;
  std::unique_ptr<SegmentationClient> client;
  if (!mask_path.empty()) {
    request.source_mask_spec = MaskSpec::from_file(mask_path);
  } else {
    request.source_mask_spec = clicks.empty() ? MaskSpec::from_phrase(mask_text) : MaskSpec::from_clicks(parse_clicks(clicks));
    if (f.segmentation_endpoint.empty()) usage_error("--clicks and --mask-text need --segmentation-endpoint");
    client = std::make_unique<HttpSegmentationClient>(f.segmentation_endpoint);
  }
  request.validate();

  if (manifest_path.empty()) manifest_path = std::filesystem::path(out_path).replace_extension(".json").string();
  EditContext context;
  context.segmentation = client.get();
  if (!f.trace_cache.empty()) context.trace_cache = f.trace_cache;
  const EditResult result = edit_image(request, *backend, context);
  write_run_outputs(request, result, out_path, manifest_path);
  out << "wrote " << out_path << " and " << manifest_path << " (" << result.mask_record.size()
      << " steps, fingerprint " << result.fingerprint_digest.substr(0, 12) << ")\n";
  return kExitOk;
}

struct BenchFlags {
  std::string dataset;
  std::string report;
  std::string checkpoints;
  int limit = -1;
  int max_new = -1;
  std::string embedding_endpoint;
  std::string perceptual_endpoint;
};

int run_bench(CommonEditFlags& f, const BenchFlags& b, std::ostream& out, std::ostream& err) {
  EditRequest base;
  f.apply(base);
  auto backend = make_backend(f.backend, f.toy_seed);
  const ImbaDataset ds = load_imba(b.dataset);
  out << "loaded " << ds.samples.size() << " samples from " << b.dataset << (ds.partial ? " (partial set)" : "")
      << "\n";

  std::unique_ptr<EmbeddingClient> embed;
  if (b.embedding_endpoint.empty()) embed = std::make_unique<ProxyEmbeddingClient>();
  else embed = std::make_unique<HttpEmbeddingClient>(b.embedding_endpoint);
  std::unique_ptr<PerceptualMetricClient> perceptual;
  if (b.perceptual_endpoint.empty()) perceptual = std::make_unique<ProxyPerceptualClient>();
  else perceptual = std::make_unique<HttpPerceptualMetricClient>(b.perceptual_endpoint);

  std::filesystem::path ckpt_dir = b.checkpoints;
  if (ckpt_dir.empty()) {
    const std::filesystem::path rp(b.report);
    ckpt_dir = rp.parent_path() / (rp.stem().string() + "_checkpoints");
  }
  std::filesystem::create_directories(ckpt_dir);

  nlohmann::json run_config = edit_options_json(base);
  run_config["backend"] = backend->descriptor().fingerprint;
  run_config["embedding"] = embed->methodology();
  run_config["perceptual"] = perceptual->methodology();
  const std::string config_digest = sha256_hex(run_config.dump());

  const std::size_t n = b.limit < 0 ? ds.samples.size()
                                    : std::min<std::size_t>(ds.samples.size(), static_cast<std::size_t>(b.limit));
  std::vector<MetricRecord> records;
  std::vector<std::string> unscored;
  int fresh = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const ImbaSample& s = ds.samples[i];
    const auto ckpt_path = ckpt_dir / (s.id + ".json");
    if (std::filesystem::exists(ckpt_path)) {
      try {
        const auto j = read_json_file(ckpt_path);
        if (j.value("config_digest", "") == config_digest) {
          if (j.value("scored", false)) {
            records.push_back({s.id, j.at("clip_score").get<double>(), j.at("lpips_background").get<double>(),
                               j.at("wall_time_s").get<double>()});
          } else {
            unscored.push_back(s.id);
          }
          continue;
        }
      } catch (const std::exception&) {
        // A torn checkpoint is recomputed.
      }
    }
    if (b.max_new >= 0 && fresh >= b.max_new) break;

    EditRequest r = base;
    r.image = load_png(s.image_path);
    r.image_ref = s.image_path.string();
    r.source_mask_spec = MaskSpec::from_file(s.source_mask_path);
    r.task = s.task;
    r.schedule.retain_object = s.retain_object;
    r.target_prompt = r.no_edit_control ? "" : s.target_prompt;
    r.object_word = s.object_word;
    const auto t0 = std::chrono::steady_clock::now();
    const EditResult result = edit_image(r, *backend, {});
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    save_png(result.edited_image, ckpt_dir / (s.id + ".png"));

    nlohmann::json ckpt = {{"sample_id", s.id}, {"config_digest", config_digest}, {"wall_time_s", wall}};
    try {
      const SpatialMask mask = load_mask_png(s.source_mask_path);
      const double clip = clip_score(result.edited_image, s.target_prompt, *embed);
      const double lpips = background_lpips(r.image, result.edited_image, mask, *perceptual);
      ckpt["scored"] = true;
      ckpt["clip_score"] = clip;
      ckpt["lpips_background"] = lpips;
      records.push_back({s.id, clip, lpips, wall});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kMetric) throw;
      ckpt["scored"] = false;
      ckpt["reason"] = e.what();
      unscored.push_back(s.id);
      err << "sample " << s.id << " unscored: " << e.what() << "\n";
    }
    const auto tmp = ckpt_path.string() + ".tmp";
    {
      std::ofstream o(tmp, std::ios::trunc);
      o << ckpt.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, ckpt_path);
    ++fresh;
    out << "[" << i + 1 << "/" << n << "] " << s.id << " done in " << wall << " s\n";
  }
  if (b.max_new >= 0 && records.size() + unscored.size() < n) {
    out << "stopped after " << fresh << " new samples; rerun to resume\n";
    return kExitOk;
  }
  ReportOptions opts;
  opts.methodology = embed->methodology() + "; " + perceptual->methodology() + "; background masked by zeroing the " +
                     std::to_string(kBackgroundDilationPx) + " px dilated object region";
  opts.unscored = unscored;
  const auto csv = write_report(records, b.report, opts);
  const auto summary = summarize(records);
  out << "report: " << b.report << " and " << csv.string() << " (" << summary.count << " records, mean CLIPScore "
      << summary.mean_clip_score << ", mean background LPIPS " << summary.mean_lpips_background << ")\n";
  return kExitOk;
}

std::atomic<bool> g_interrupted{false};
extern "C" void on_signal(int) { g_interrupted = true; }

int run_serve(const std::string& config_path, const std::string& host, int port, const std::string& store,
              bool port_given, std::ostream& out) {
  ServiceConfig cfg;
  if (!config_path.empty()) cfg = ServiceConfig::from_json(read_json_file(config_path));
  if (!host.empty()) cfg.host = host;
  if (port_given) cfg.port = port;
  if (!store.empty()) cfg.store_path = store;
  if (cfg.backend != "toy") make_backend(cfg.backend, cfg.toy_seed);  // reports the usage error
  std::shared_ptr<SegmentationClient> seg;
  if (!cfg.segmentation_endpoint.empty()) {
    seg = std::make_shared<CachingSegmentationClient>(std::make_shared<HttpSegmentationClient>(cfg.segmentation_endpoint));
  }
  const std::uint64_t toy_seed = cfg.toy_seed;
  JobService service(cfg, [toy_seed] { return make_backend("toy", toy_seed); }, seg);
  const int bound = service.start();
  out << "serving on http://" << cfg.host << ":" << bound << " (store " << cfg.store_path.string() << ")\n"
      << std::flush;
  g_interrupted = false;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  service.stop();
  out << "stopped\n";
  return kExitOk;
}

int run_segment_stub(const std::string& host, int port, const std::string& fixture, int radius, std::ostream& out) {
  StubSegmentationServer stub;
  stub.set_click_radius(radius);
  if (!fixture.empty()) stub.set_fixture(read_json_file(fixture));
  out << "stub segmentation service on http://" << host << ":" << port << "\n" << std::flush;
  std::thread stopper([&stub] {
    while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    stub.stop();
  });
  g_interrupted = false;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  stub.serve_forever(host, port);
  g_interrupted = true;
  stopper.join();
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"maskedit: mask-guided zero-shot image editing"};
  app.require_subcommand(1);

  CommonEditFlags edit_flags;
  std::string image, mask, clicks, mask_text, out_path, manifest;
  auto* edit = app.add_subcommand("edit", "edit one image");
  edit->add_option("--image", image, "input PNG")->required()->check(CLI::ExistingFile);
  auto* mask_opt = edit->add_option("--mask", mask, "source mask PNG (nonzero = edit region)")->check(CLI::ExistingFile);
  auto* clicks_opt = edit->add_option("--clicks", clicks, "click points \"x,y[,+|-];...\" for the segmentation service");
  auto* text_opt = edit->add_option("--mask-text", mask_text, "phrase for the segmentation service");
  mask_opt->excludes(clicks_opt)->excludes(text_opt);
  clicks_opt->excludes(text_opt);
  edit->add_option("--out", out_path, "output PNG")->required();
  edit->add_option("--manifest", manifest, "run manifest path (default: --out with .json)");
  edit_flags.add(edit, true);

  CommonEditFlags bench_flags;
  BenchFlags bench_args;
  auto* bench = app.add_subcommand("bench", "run the benchmark harness over a dataset directory");
  bench->add_option("--dataset", bench_args.dataset, "dataset root holding manifest.json")->required();
  bench->add_option("--limit", bench_args.limit, "evaluate the first N samples (default: all)");
  bench->add_option("--report", bench_args.report, "report path; the CSV goes next to it")->required();
  bench->add_option("--checkpoints", bench_args.checkpoints, "per-sample checkpoint directory");
  bench->add_option("--max-new", bench_args.max_new, "process at most N uncheckpointed samples, then stop");
  bench->add_option("--embedding-endpoint", bench_args.embedding_endpoint, "image/text embedding service");
  bench->add_option("--perceptual-endpoint", bench_args.perceptual_endpoint, "perceptual distance service");
  bench_flags.add(bench, false);

  std::string serve_config, serve_host, serve_store;
  int serve_port = 8080;
  auto* serve = app.add_subcommand("serve", "run the HTTP job service");
  serve->add_option("--config", serve_config, "service config JSON");
  serve->add_option("--host", serve_host, "bind address");
  auto* port_opt = serve->add_option("--port", serve_port, "port (0 picks a free one)");
  serve->add_option("--store", serve_store, "artifact and job store directory");

  std::string stub_host = "127.0.0.1", stub_fixture;
  int stub_port = 8901, stub_radius = 3;
  auto* stub = app.add_subcommand("segment-stub", "run the stub segmentation service");
  stub->add_option("--host", stub_host, "bind address");
  stub->add_option("--port", stub_port, "port");
  stub->add_option("--fixture", stub_fixture, "recorded response JSON replayed for every request");
  stub->add_option("--click-radius", stub_radius, "disk radius drawn around positive clicks");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitValidation;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitValidation;
  }

  try {
    if (edit->parsed()) return run_edit(edit_flags, image, mask, clicks, mask_text, out_path, manifest, out);
    if (bench->parsed()) return run_bench(bench_flags, bench_args, out, err);
    if (serve->parsed()) return run_serve(serve_config, serve_host, serve_port, serve_store, port_opt->count() > 0, out);
    if (stub->parsed()) return run_segment_stub(stub_host, stub_port, stub_fixture, stub_radius, out);
  } catch (const ValidationFailure& v) {
    err << "error: " << v.message << "\n";
    return kExitValidation;
  } catch (const Error& e) {
    err << "error [" << error_code_name(e.code()) << "]: " << e.what() << "\n";
    return is_validation(e.code()) ? kExitValidation : kExitPipeline;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitPipeline;
  }
  return kExitValidation;
}

}  // namespace maskedit
