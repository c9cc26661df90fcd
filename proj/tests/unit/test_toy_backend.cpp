// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "maskedit/backend.hpp"
#include "maskedit/error.hpp"
#include "maskedit/toy_backend.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace maskedit;

namespace {

LatentTensor random_latent(const LatentShape& shape, std::uint64_t seed, int tag = 500) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  LatentTensor z = LatentTensor::zeros(shape, tag);
  for (double& v : z.mutable_data()) v = g(rng);
  return z;
}

oracle::Rows rows_of(const Matrix& m, Eigen::Index col0 = 0, Eigen::Index cols = -1) {
  if (cols < 0) cols = m.cols();
  oracle::Rows out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(cols)));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, col0 + j);
  return out;
}

// Forward pass written from the published weights with per-head loops and
// the scalar attention oracle.
std::vector<double> reference_eps(const ToyBackend& toy, const LatentTensor& z, int t, const Matrix& cond) {
  const auto& cfg = toy.config();
  const auto& w = toy.weights();
  const int n = cfg.latent_grid.h * cfg.latent_grid.w;
  const auto channels = w.input.rows();
  const int hd = cfg.head_dim;

  Matrix tokens(n, channels);
  for (int y = 0; y < cfg.latent_grid.h; ++y)
    for (int x = 0; x < cfg.latent_grid.w; ++x)
      for (Eigen::Index c = 0; c < channels; ++c) tokens(y * cfg.latent_grid.w + x, c) = z.at(0, static_cast<int>(c), y, x);

  const double s = std::numbers::pi * t / 1000.0;
  const double tf[4] = {std::sin(s), std::cos(s), std::sin(4 * s), std::cos(4 * s)};
  Matrix hidden = cfg.latent_gain * tokens * w.input + w.position;
  for (int i = 0; i < n; ++i)
    for (int f = 0; f < 4; ++f) hidden.row(i) += tf[f] * w.time_proj.row(f);

  auto attend = [&](const Matrix& q, const Matrix& k, const Matrix& v, bool local) {
    Matrix out(q.rows(), q.cols());
    for (int h = 0; h < cfg.heads; ++h) {
      Matrix qh = q.middleCols(h * hd, hd), kh = k.middleCols(h * hd, hd);
      if (local) {
        qh += w.local_q;
        kh += w.local_k;
      }
      const auto o = oracle::attention(rows_of(qh), rows_of(kh), rows_of(v, h * hd, hd));
      for (std::size_t i = 0; i < o.size(); ++i)
        for (int j = 0; j < hd; ++j) out(static_cast<Eigen::Index>(i), h * hd + j) = o[i][static_cast<std::size_t>(j)];
    }
    return out;
  };

  for (const auto& b : w.blocks) {
    hidden += attend(hidden * b.self_q, hidden * b.self_k, hidden * b.self_v, cfg.locality > 0) * b.self_out;
    hidden += attend(hidden * b.cross_q, cond * b.cross_k, cond * b.cross_v, false) * b.cross_out;
  }
  const double scale = cfg.output_gain * (1.0 + 0.25 * std::sin(s));
  const Matrix e = hidden * w.output * scale;
  std::vector<double> out(static_cast<std::size_t>(channels) * n);
  for (Eigen::Index c = 0; c < channels; ++c)
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(c) * n + i] = e(i, c);
  return out;
}

class WrongOrderBackend : public ToyBackend {
 protected:
  NoiseResult do_predict_noise(const LatentTensor& z, int t, const PromptEmbedding& c,
                               const ForwardOptions& o) override {
    auto r = ToyBackend::do_predict_noise(z, t, c, o);
    std::swap(r.visited[0], r.visited[1]);
    return r;
  }
};

class ShrinkingHook : public AttentionHook {
 public:
  std::optional<std::vector<FeatureMatrix>> on_attention(const AttentionCall& call) override {
    return std::vector<FeatureMatrix>(static_cast<std::size_t>(call.heads()), FeatureMatrix(Matrix::Zero(1, 1)));
  }
};

}  // namespace

TEST(ToyBackend, ForwardMatchesIndependentReimplementation) {
  ToyBackend toy;
  const auto cond = toy.encode_text("a red apple on a table", "apple");
  for (int trial = 0; trial < 5; ++trial) {
    const int t = 1 + 200 * trial;
    const auto z = random_latent(toy.descriptor().latent_shape, 40 + trial, t);
    const auto eps = toy.predict_noise(z, t, cond).eps;
    const auto ref = reference_eps(toy, z, t, cond.token_embeddings);
    ASSERT_EQ(eps.data().size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(eps.data()[i], ref[i], 1e-10);
  }
}

TEST(ToyBackend, LocalTermsGiveSquaredDistanceLogits) {
  ToyBackendConfig cfg;
  cfg.locality = 0.7;
  ToyBackend toy(cfg);
  const auto& w = toy.weights();
  const int gw = cfg.latent_grid.w;
  const double cy = 0.5 * (cfg.latent_grid.h - 1), cx = 0.5 * (gw - 1);
  const Eigen::Index n = w.local_q.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double piy = i / gw - cy, pix = i % gw - cx;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double dy = static_cast<double>(i / gw - j / gw), dx = static_cast<double>(i % gw - j % gw);
      const double logit = w.local_q.row(i).dot(w.local_k.row(j)) / std::sqrt(static_cast<double>(cfg.head_dim));
      EXPECT_NEAR(logit, -cfg.locality * (dy * dy + dx * dx) + cfg.locality * (piy * piy + pix * pix), 1e-9);
    }
  }
}

TEST(ToyBackend, DescriptorListsSitesInExecutionOrder) {
  ToyBackend toy;
  const auto& d = toy.descriptor();
  ASSERT_EQ(d.sites.size(), 4u);
  EXPECT_EQ(d.self_attention_layer_count(), 2);
  EXPECT_EQ(d.cross_attention_layer_count(), 2);
  EXPECT_EQ(d.sites[0].kind, AttentionKind::kSelf);
  EXPECT_EQ(d.sites[1].kind, AttentionKind::kCross);
  EXPECT_NO_THROW(d.validate());
  const auto r = toy.predict_noise(random_latent(d.latent_shape, 1), 101, toy.encode_text(""));
  ASSERT_EQ(r.visited.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(r.visited[i].kind, d.sites[i].kind);
    EXPECT_EQ(r.visited[i].layer_index, d.sites[i].layer_index);
  }
  EXPECT_EQ(toy.forward_count(), 1u);
}

TEST(ToyBackend, MisorderedSitesAreAnInstrumentationError) {
  WrongOrderBackend bad;
  try {
    bad.predict_noise(random_latent(bad.descriptor().latent_shape, 2), 11, bad.encode_text("x"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInstrumentation);
  }
}

TEST(ToyBackend, WrongShapedReplacementIsAnInterventionError) {
  ToyBackend toy;
  ShrinkingHook hook;
  ForwardOptions opts;
  opts.hook = &hook;
  try {
    toy.predict_noise(random_latent(toy.descriptor().latent_shape, 3), 11, toy.encode_text("x"), opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIntervention);
  }
}

TEST(ToyBackend, ShapeErrors) {
  ToyBackend toy;
  EXPECT_THROW(toy.predict_noise(LatentTensor::zeros({1, 3, 4, 4}), 11, toy.encode_text("x")), DimensionError);
  EXPECT_THROW(toy.encode_image(testutil::synthetic_image(8, 8)), DimensionError);
  EXPECT_THROW(toy.decode_latent(LatentTensor::zeros({1, 12, 4, 4})), DimensionError);
  PromptEmbedding wrong;
  wrong.token_embeddings = Matrix::Zero(2, 3);
  EXPECT_THROW(toy.predict_noise(random_latent(toy.descriptor().latent_shape, 4), 11, wrong), DimensionError);
}

TEST(ToyBackend, ConfigValidation) {
  ToyBackendConfig cfg;
  cfg.head_dim = 2;
  EXPECT_THROW(ToyBackend{cfg}, Error);
  cfg = {};
  cfg.latent_gain = -1;
  EXPECT_THROW(ToyBackend{cfg}, Error);
}

TEST(ToyBackend, VaeRoundTripIsExact) {
  ToyBackend toy;
  const Image im = testutil::synthetic_image(16, 16, 9);
  const Image back = toy.decode_latent(toy.encode_image(im));
  ASSERT_EQ(back.pixels.size(), im.pixels.size());
  for (std::size_t i = 0; i < im.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], im.pixels[i], 1e-12);
  const Matrix& v = toy.weights().vae;
  EXPECT_LE((v * v.transpose() - Matrix::Identity(v.rows(), v.cols())).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ToyBackend, TokenizerAndObjectPositions) {
  EXPECT_EQ(ToyBackend::tokenize("A Red-apple, on  the TABLE!"),
            (std::vector<std::string>{"a", "red", "apple", "on", "the", "table"}));
  ToyBackend toy;
  const auto e = toy.encode_text("a red apple and another red apple", "red apple");
  ASSERT_EQ(e.token_texts.front(), "<bos>");
  ASSERT_EQ(e.token_texts.back(), "<eos>");
  EXPECT_EQ(std::vector<std::size_t>(e.object_token_positions.begin(), e.object_token_positions.end()),
            (std::vector<std::size_t>{2, 3, 6, 7}));
  EXPECT_TRUE(toy.encode_text("a cat", "dog").object_token_positions.empty());
  const auto a = toy.encode_text("cat"), b = toy.encode_text("cat");
  EXPECT_EQ(a.token_embeddings, b.token_embeddings);
  EXPECT_EQ(toy.encode_text("").n_tokens(), 2);
}

TEST(ToyBackend, LongPromptsAreTruncated) {
  ToyBackend toy;
  std::string prompt;
  for (int i = 0; i < 100; ++i) prompt += "word" + std::to_string(i) + " ";
  const auto e = toy.encode_text(prompt);
  EXPECT_TRUE(e.truncated);
  EXPECT_EQ(e.n_tokens(), toy.config().max_tokens);
}

TEST(ToyBackend, SeedChangesFingerprintAndWeights) {
  ToyBackendConfig a, b;
  b.seed = 8;
  ToyBackend ta(a), tb(b), ta2(a);
  EXPECT_NE(ta.descriptor().fingerprint, tb.descriptor().fingerprint);
  EXPECT_EQ(ta.descriptor().fingerprint, ta2.descriptor().fingerprint);
  EXPECT_NE(ta.weights().input, tb.weights().input);
}
