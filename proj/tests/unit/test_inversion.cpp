// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "maskedit/error.hpp"
#include "maskedit/inversion.hpp"
#include "maskedit/toy_backend.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace maskedit;

namespace {

double rel_err(const LatentTensor& a, const LatentTensor& b) {
  return (a - b).l2_norm() / b.l2_norm();
}

LatentTensor clean_latent(ToyBackend& toy, std::uint64_t seed = 1) {
  return toy.encode_image(testutil::synthetic_image(16, 16, seed));
}

}  // namespace

TEST(Inversion, TraceLayoutAndTags) {
  ToyBackend toy;
  const auto trace = ddim_invert(clean_latent(toy), toy, 50);
  ASSERT_EQ(trace.steps(), 50);
  EXPECT_EQ(trace.timesteps().front(), LatentTensor::kCleanTimestep);
  EXPECT_EQ(trace.timesteps()[1], 1);
  EXPECT_EQ(trace.timesteps().back(), 981);
  for (std::size_t i = 0; i < trace.latents().size(); ++i) {
    EXPECT_EQ(trace.latents()[i].timestep_tag(), trace.timesteps()[i]);
  }
  EXPECT_EQ(trace.index_of(21), 2);
  EXPECT_THROW(trace.index_of(22), Error);
  EXPECT_EQ(toy.forward_count(), 50u);
}

TEST(Inversion, EachStepMatchesScalarDdimOracle) {
  ToyBackend toy;
  const auto trace = ddim_invert(clean_latent(toy), toy, 10);
  const auto& sched = toy.descriptor().schedule;
  const auto null_text = toy.encode_text("");
  for (int i = 0; i < trace.steps(); ++i) {
    const auto& z = trace.latents()[static_cast<std::size_t>(i)];
    const int t = trace.timesteps()[static_cast<std::size_t>(i + 1)];
    const auto eps = toy.predict_noise(z, t, null_text).eps;
    const auto expect = oracle::ddim(z.data(), eps.data(), sched.alpha_at(trace.timesteps()[static_cast<std::size_t>(i)]),
                                     sched.alpha_at(t));
    const auto& got = trace.latents()[static_cast<std::size_t>(i + 1)].data();
    for (std::size_t j = 0; j < got.size(); ++j) ASSERT_NEAR(got[j], expect[j], 1e-12);
  }
}

TEST(Inversion, ZeroNoiseEstimateRoundTripsExactly) {
  ToyBackendConfig cfg;
  cfg.output_gain = 0.0;
  ToyBackend toy(cfg);
  const auto z0 = clean_latent(toy);
  const auto trace = ddim_invert(z0, toy, 50);
  const auto back = ddim_sample(trace.noisiest(), toy, toy.encode_text(""), 50);
  EXPECT_LE((back - z0).l2_norm(), 1e-6 * z0.l2_norm());
}

TEST(Inversion, ReconstructionErrorIsSmallAndShrinksWithSteps) {
  ToyBackend toy;
  const auto z0 = clean_latent(toy);
  const auto null_text = toy.encode_text("");
  double previous = INFINITY;
  for (int steps : {10, 25, 50}) {
    const auto trace = ddim_invert(z0, toy, steps);
    const double err = rel_err(ddim_sample(trace.noisiest(), toy, null_text, steps), z0);
    EXPECT_LT(err, previous) << steps;
    previous = err;
    if (steps == 50) EXPECT_LE(err, 1e-3);
  }
}

TEST(Inversion, SamplingStepRetracesTheTrace) {
  ToyBackend toy;
  const auto trace = ddim_invert(clean_latent(toy, 5), toy, 50);
  const auto& sched = toy.descriptor().schedule;
  const auto null_text = toy.encode_text("");
  for (int i = trace.steps(); i >= 1; --i) {
    const auto& z = trace.latents()[static_cast<std::size_t>(i)];
    const int t = trace.timesteps()[static_cast<std::size_t>(i)];
    const int t_prev = trace.timesteps()[static_cast<std::size_t>(i - 1)];
    const auto eps = toy.predict_noise(z, t, null_text).eps;
    const auto stepped = ddim_step(z, eps, t, t_prev, sched);
    EXPECT_LE(rel_err(stepped, trace.latents()[static_cast<std::size_t>(i - 1)]), 1e-3) << i;
  }
}

TEST(Inversion, SourceFeaturesCaptureEverySelfAttentionLayer) {
  ToyBackend toy;
  const auto trace = ddim_invert(clean_latent(toy), toy, 10);
  const auto null_text = toy.encode_text("");
  const auto features = source_features(trace, 4, toy, null_text, 6);
  ASSERT_EQ(features.size(), 2u);
  CaptureHook capture;
  ForwardOptions opts;
  opts.hook = &capture;
  toy.predict_noise(trace.latents()[4], trace.timesteps()[4], null_text, opts);
  for (const auto& [layer, kv] : features) {
    const auto& c = capture.captures().at({AttentionKind::kSelf, layer});
    ASSERT_EQ(kv.k.size(), c.k.size());
    for (std::size_t h = 0; h < c.k.size(); ++h) {
      EXPECT_EQ(kv.k[h].data(), c.k[h].data());
      EXPECT_EQ(kv.v[h].data(), c.v[h].data());
    }
  }
  EXPECT_THROW(source_features(trace, 11, toy, null_text), Error);
}

TEST(InversionTrace, SaveLoadIsBitExactAndChecksFingerprint) {
  ToyBackend toy;
  const auto trace = ddim_invert(clean_latent(toy), toy, 10);
  const auto dir = testutil::temp_dir("trace_roundtrip");
  save_trace(trace, toy.descriptor().fingerprint, dir);
  const auto loaded = load_trace(dir, toy.descriptor().fingerprint);
  ASSERT_EQ(loaded.steps(), trace.steps());
  EXPECT_EQ(loaded.timesteps(), trace.timesteps());
  for (std::size_t i = 0; i < trace.latents().size(); ++i) {
    EXPECT_TRUE(loaded.latents()[i].same_values(trace.latents()[i]));
  }
  try {
    load_trace(dir, "other-backend");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kLoad);
  }
}

TEST(InversionTrace, CorruptFilesAreLoadErrors) {
  ToyBackend toy;
  const auto trace = ddim_invert(clean_latent(toy), toy, 10);
  const auto dir = testutil::temp_dir("trace_corrupt");
  save_trace(trace, toy.descriptor().fingerprint, dir);
  std::filesystem::resize_file(dir / "latent_0003.f64", 10);
  EXPECT_THROW(load_trace(dir, toy.descriptor().fingerprint), Error);
  EXPECT_THROW(load_trace(testutil::temp_dir("trace_missing"), toy.descriptor().fingerprint), Error);
}

TEST(InversionTrace, ConstructorValidates) {
  EXPECT_THROW(InversionTrace({}, {}), Error);
  const LatentTensor z = LatentTensor::zeros({1, 1, 1, 1});
  EXPECT_THROW(InversionTrace({z, z}, {LatentTensor::kCleanTimestep}), Error);
}
