// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

// One PASS/FAIL/SKIP line per headline criterion. Exit status is nonzero if
// any criterion fails.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "maskedit/attention.hpp"
#include "maskedit/cli.hpp"
#include "maskedit/config.hpp"
#include "maskedit/control.hpp"
#include "maskedit/image.hpp"
#include "maskedit/inversion.hpp"
#include "maskedit/mask.hpp"
#include "maskedit/pipeline.hpp"
#include "maskedit/scheduler.hpp"
#include "maskedit/toy_backend.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace maskedit;
using testutil::max_abs_diff;
using testutil::to_fm;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

void skip(const std::string& name, const std::string& reason) {
  std::printf("SKIP %s: %s\n", name.c_str(), reason.c_str());
  std::fflush(stdout);
}

// Runs a criterion body; an exception is a failure, never a crash.
void criterion(const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
  try {
    const auto [pass, detail] = body();
    report(name, pass, detail);
  } catch (const std::exception& e) {
    report(name, false, std::string("threw: ") + e.what());
  }
}

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << x;
  return s.str();
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

constexpr int kInstances = 100;
constexpr double kTol = 1e-6;

std::pair<bool, std::string> identities() {
  std::mt19937_64 rng(1001);
  double worst[5] = {0, 0, 0, 0, 0};
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t n = 1 + rng() % 64, m = 1 + rng() % 64, d = 1 + rng() % 8;
    const auto q = oracle::random_rows(rng, n, d, 2.0);
    const auto k = oracle::random_rows(rng, m, d, 2.0);
    const auto v = oracle::random_rows(rng, m, d);
    worst[0] = std::max(worst[0], max_abs_diff(masked_attention(to_fm(q), to_fm(k), to_fm(v), KeyMask::ones(m)),
                                               oracle::attention(q, k, v)));

    const auto fg = oracle::random_rows(rng, n, d), bg = oracle::random_rows(rng, n, d);
    worst[1] = std::max(worst[1], max_abs_diff(compose_location(to_fm(fg), to_fm(bg), KeyMask::zeros(n)), bg));
    worst[2] = std::max(worst[2], max_abs_diff(compose_location(to_fm(fg), to_fm(bg), KeyMask::ones(n)), fg));

    const std::size_t lt = 2 + rng() % 77, ln = 2 + rng() % 77;
    const auto kt = oracle::random_rows(rng, lt, d), vt = oracle::random_rows(rng, lt, d);
    const auto kn = oracle::random_rows(rng, ln, d), vn = oracle::random_rows(rng, ln, d);
    worst[3] = std::max(worst[3], max_abs_diff(localized_cross_attention(to_fm(q), to_fm(kt), to_fm(vt), to_fm(kn),
                                                                         to_fm(vn), KeyMask::ones(n)),
                                               oracle::attention(q, kt, vt)));
    worst[4] = std::max(worst[4], max_abs_diff(localized_cross_attention(to_fm(q), to_fm(kt), to_fm(vt), to_fm(kn),
                                                                         to_fm(vn), KeyMask::zeros(n)),
                                               oracle::attention(q, kn, vn)));
  }
  const double w = *std::max_element(std::begin(worst), std::end(worst));
  std::ostringstream d;
  d << "5 identities x " << kInstances << " instances, max deviation " << fmt(w) << " (masked all-ones " << fmt(worst[0])
    << ", compose M=0 " << fmt(worst[1]) << ", compose M=1 " << fmt(worst[2]) << ", localized M=1 " << fmt(worst[3])
    << ", localized M=0 " << fmt(worst[4]) << "; tolerance 1e-6)";
  return {w <= kTol, d.str()};
}

std::pair<bool, std::string> oracle_equivalence() {
  constexpr int kCases = 60;
  std::mt19937_64 rng(1002);

  double attention_dev = 0;
  for (int i = 0; i < kCases; ++i) {
    const std::size_t n = 1 + rng() % 12, m = 1 + rng() % 20, d = 1 + rng() % 8;
    const auto q = oracle::random_rows(rng, n, d, 2.0);
    const auto k = oracle::random_rows(rng, m, d, 2.0);
    const auto v = oracle::random_rows(rng, m, 3);
    const KeyMask mask = testutil::random_mask(rng, m, 0.4);
    const std::vector<int> keep(mask.bits().begin(), mask.bits().end());
    attention_dev = std::max(attention_dev, max_abs_diff(masked_attention(to_fm(q), to_fm(k), to_fm(v), mask),
                                                         oracle::attention(q, k, v, keep)));
  }

  int hull_mismatch = 0;
  for (int i = 0; i < kCases; ++i) {
    const int h = 8 + static_cast<int>(rng() % 10), w = 8 + static_cast<int>(rng() % 10);
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(h) * w, 0);
    const int points = 1 + static_cast<int>(rng() % 7);
    std::vector<oracle::Pt> pts;
    for (int p = 0; p < points; ++p) {
      const int y = static_cast<int>(rng() % static_cast<unsigned>(h)), x = static_cast<int>(rng() % static_cast<unsigned>(w));
      bits[static_cast<std::size_t>(y) * w + x] = 1;
      pts.emplace_back(x, y);
    }
    const SpatialMask hull = convex_hull(SpatialMask::from_bits(h, w, bits));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) hull_mismatch += hull.bit(y, x) != oracle::in_hull_brute(pts, {x, y});
  }

  int threshold_mismatch = 0;
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int i = 0; i < kCases; ++i) {
    const Eigen::Index h = 2 + static_cast<Eigen::Index>(rng() % 8), w = 2 + static_cast<Eigen::Index>(rng() % 8);
    Matrix map(h, w);
    std::vector<double> flat;
    for (Eigen::Index y = 0; y < h; ++y)
      for (Eigen::Index x = 0; x < w; ++x) flat.push_back(map(y, x) = u(rng));
    BinarizeRule rule;
    rule.std_factor = (i % 3) * 0.5;
    const Matrix got = binarize_attention_map(map, rule);
    const auto expect = oracle::threshold_mean_std(flat, rule.std_factor);
    for (std::size_t j = 0; j < flat.size(); ++j)
      threshold_mismatch += got(static_cast<Eigen::Index>(j) / w, static_cast<Eigen::Index>(j) % w) != expect[j];
  }

  double ddim_dev = 0;
  const auto sched = NoiseSchedule::scaled_linear();
  const auto alphas = oracle::scaled_linear_alphas(1000, 0.00085, 0.012);
  std::normal_distribution<double> g;
  const LatentShape shape{1, 4, 4, 4};
  for (int i = 0; i < kCases; ++i) {
    std::vector<double> z(shape.numel()), e(shape.numel());
    for (auto& x : z) x = g(rng);
    for (auto& x : e) x = g(rng);
    const int t = 1 + static_cast<int>(rng() % 999);
    const int t_prev = static_cast<int>(rng() % static_cast<std::uint64_t>(t));
    const auto out = ddim_step(LatentTensor(shape, z, t), LatentTensor(shape, e, t), t, t_prev, sched);
    const auto ref = oracle::ddim(z, e, alphas[static_cast<std::size_t>(t)], alphas[static_cast<std::size_t>(t_prev)]);
    for (std::size_t j = 0; j < ref.size(); ++j) ddim_dev = std::max(ddim_dev, std::abs(out.data()[j] - ref[j]));
  }

  const bool pass = attention_dev <= kTol && hull_mismatch == 0 && threshold_mismatch == 0 && ddim_dev <= kTol;
  std::ostringstream d;
  d << kCases << " instances each: masked attention max deviation " << fmt(attention_dev) << ", convex hull "
    << hull_mismatch << " mismatched pixels, mean+std threshold " << threshold_mismatch
    << " mismatched cells, DDIM step max deviation " << fmt(ddim_dev) << " (tolerance 1e-6)";
  return {pass, d.str()};
}

EditRequest toy_request(TaskKind task, const std::string& prompt) {
  EditRequest r;
  r.image = testutil::synthetic_image(16, 16, 3);
  r.source_mask_spec = MaskSpec::from_mask(testutil::synthetic_mask(16, 16));
  r.task = task;
  r.target_prompt = prompt;
  r.object_word = "cube";
  r.schedule.retain_object = default_retain_object(task);
  r.seed = 11;
  return r;
}

struct RoutingCheck : EditObserver {
  int controlled = 0, normal = 0, mismatched = 0;
  void on_self_attention(Branch, const AttentionSite&, bool is_normal, const std::vector<FeatureMatrix>& out,
                         const std::vector<FeatureMatrix>* background) override {
    if (is_normal) {
      ++normal;
      return;
    }
    ++controlled;
    if (background == nullptr || background->size() != out.size()) {
      ++mismatched;
      return;
    }
    for (std::size_t h = 0; h < out.size(); ++h)
      if (!(out[h].data().array() == (*background)[h].data().array()).all()) ++mismatched;
  }
};

std::pair<bool, std::string> removal_routing() {
  ToyBackend toy;
  RoutingCheck check;
  EditContext ctx;
  ctx.observer = &check;
  const EditResult r = edit_image(toy_request(TaskKind::kRemoveObject, ""), toy, ctx);
  std::size_t nonzero_steps = 0;
  for (const auto& rec : r.mask_record) nonzero_steps += rec.mask.count_ones() != 0;
  const bool pass = r.mask_record.size() == 50 && nonzero_steps == 0 && check.controlled > 0 && check.mismatched == 0;
  std::ostringstream d;
  d << check.controlled << " gated self-attention outputs, " << check.mismatched
    << " differ bitwise from the background branch; " << r.mask_record.size() << " recorded target masks, "
    << nonzero_steps << " nonzero (" << check.normal << " sites took plain attention under the mixing rate)";
  return {pass, d.str()};
}

std::pair<bool, std::string> reconstruction() {
  ToyBackend toy;
  const LatentTensor z0 = toy.encode_image(testutil::synthetic_image(16, 16, 1));
  const auto null_text = toy.encode_text("");
  std::vector<double> errs;
  for (int steps : {10, 25, 50}) {
    const auto trace = ddim_invert(z0, toy, steps);
    const auto back = ddim_sample(trace.noisiest(), toy, null_text, steps);  // conditional pass only: guidance 1
    errs.push_back((back - z0).l2_norm() / z0.l2_norm());
  }
  const bool pass = errs[2] <= 1e-3 && errs[0] > errs[1] && errs[1] > errs[2];
  std::ostringstream d;
  d << "relative L2 at 10/25/50 steps: " << fmt(errs[0]) << " / " << fmt(errs[1]) << " / " << fmt(errs[2])
    << " (limit 1e-3 at 50, strictly decreasing)";
  return {pass, d.str()};
}

struct CrossRecorder : EditObserver {
  std::vector<std::vector<FeatureMatrix>> outputs;
  void on_cross_attention(Branch b, const AttentionSite&, const std::vector<FeatureMatrix>& out) override {
    if (b == Branch::kConditional) outputs.push_back(out);
  }
};

std::pair<bool, std::string> localization() {
  auto run = [](const std::string& prompt) {
    ToyBackend toy;
    CrossRecorder rec;
    EditContext ctx;
    ctx.observer = &rec;
    auto req = toy_request(TaskKind::kModifyRegion, prompt);
    req.schedule.normal_attention_fraction = 0.0;
    edit_image(req, toy, ctx);
    return rec.outputs;
  };
  const auto a = run("a blue cube");
  const auto b = run("a striped wooden cube with handles");
  if (a.size() != b.size() || a.empty()) return {false, "cross-attention site counts differ between runs"};
  const KeyMask inside = resample_mask(testutil::synthetic_mask(16, 16), Grid{8, 8});
  double outside_dev = 0, inside_dev = 0;
  for (std::size_t s = 0; s < a.size(); ++s)
    for (std::size_t h = 0; h < a[s].size(); ++h)
      for (std::size_t i = 0; i < inside.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        const double dev = (a[s][h].data().row(row) - b[s][h].data().row(row)).cwiseAbs().maxCoeff();
        double& slot = inside[i] ? inside_dev : outside_dev;
        slot = std::max(slot, dev);
      }
  std::ostringstream d;
  d << a.size() << " cross-attention sites, outside-token deviation " << fmt(outside_dev)
    << " (limit 1e-6), inside-token deviation " << fmt(inside_dev);
  return {outside_dev <= kTol && inside_dev > 0, d.str()};
}

std::pair<bool, std::string> mixing() {
  std::ostringstream d;
  bool pass = true;
  d << "normal-attention decisions over 50 steps x 16 layers:";
  for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 12345ULL}) {
    EditSchedule s;
    s.rng_seed = seed;
    std::vector<bool> first, replay;
    for (int pass_no = 0; pass_no < 2; ++pass_no)
      for (int step = 0; step < 50; ++step)
        for (int layer = 0; layer < 16; ++layer)
          (pass_no == 0 ? first : replay)
              .push_back(should_use_normal_self_attention({step, layer, AttentionKind::kSelf, {8, 8}}, s));
    const auto hits = std::count(first.begin(), first.end(), true);
    const bool ok = hits >= 64 && hits <= 96 && first == replay;
    pass = pass && ok;
    d << " seed " << seed << " -> " << hits << (first == replay ? " (replay identical)" : " (replay differs)") << ";";
  }
  d << " band [64, 96]";
  return {pass, d.str()};
}

std::pair<bool, std::string> determinism() {
  const auto dir = testutil::temp_dir("acceptance_determinism");
  save_png(testutil::synthetic_image(16, 16, 3), dir / "in.png");
  save_mask_png(testutil::synthetic_mask(16, 16), dir / "mask.png");
  for (const char* sub : {"a", "b"}) {
    std::ostringstream out, err;
    const int code = run_cli({"edit", "--image", (dir / "in.png").string(), "--mask", (dir / "mask.png").string(),
                              "--prompt", "a photo of a dog", "--object-word", "dog", "--task", "replace", "--seed",
                              "7", "--out", (dir / sub / "out.png").string()},
                             out, err);
    if (code != 0) return {false, "CLI run exited " + std::to_string(code) + ": " + err.str()};
  }
  const bool images = slurp(dir / "a" / "out.png") == slurp(dir / "b" / "out.png");
  auto ma = read_json_file(dir / "a" / "out.json"), mb = read_json_file(dir / "b" / "out.json");
  for (auto* m : {&ma, &mb}) {
    m->erase("timing");
    m->erase("created_at");
  }
  int thumbs = 0, thumb_diff = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "a" / "out_masks")) {
    ++thumbs;
    thumb_diff += slurp(e.path()) != slurp(dir / "b" / "out_masks" / e.path().filename());
  }
  std::ostringstream d;
  d << "two toy-backend CLI runs, seed 7: output PNG " << (images ? "identical" : "differs") << ", manifest "
    << (ma == mb ? "identical" : "differs") << " without timing/created_at, " << thumb_diff << " of " << thumbs
    << " mask thumbnails differ";
  return {images && ma == mb && thumb_diff == 0, d.str()};
}

}  // namespace

int main() {
  criterion("controller-identities", identities);
  criterion("oracle-equivalence", oracle_equivalence);
  criterion("removal-routing", removal_routing);
  criterion("reconstruction-control", reconstruction);
  criterion("localization", localization);
  criterion("mixing-rate", mixing);
  criterion("cli-determinism", determinism);
  skip("gpu-tier",
       "needs SD-1.5 weights and a CUDA device; run `python -m maskedit gpu-smoke --weights DIR` on a GPU host");
  std::printf("%d failed\n", failures);
  return failures == 0 ? 0 : 1;
}
