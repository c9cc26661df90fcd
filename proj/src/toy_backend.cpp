// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/toy_backend.hpp"

#include <Eigen/QR>

#include <cctype>
#include <cmath>
#include <numbers>
#include <sstream>

#include "maskedit/attention.hpp"
#include "maskedit/error.hpp"
#include "maskedit/random.hpp"

namespace maskedit {
namespace {

Matrix gaussian(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols, double scale) {
  const auto values = seeded_normals(seed, static_cast<std::size_t>(rows * cols));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows * cols; ++i) m.data()[i] = values[static_cast<std::size_t>(i)] * scale;
  return m;
}

std::vector<FeatureMatrix> split_heads(const Matrix& x, int heads, int head_dim) {
  std::vector<FeatureMatrix> out;
  out.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    out.emplace_back(Matrix(x.middleCols(h * head_dim, head_dim)));
  }
  return out;
}

Matrix merge_heads(const std::vector<FeatureMatrix>& heads, int head_dim) {
  const Eigen::Index n = heads.front().n_tokens();
  Matrix out(n, static_cast<Eigen::Index>(heads.size()) * head_dim);
  for (std::size_t h = 0; h < heads.size(); ++h) {
    out.middleCols(static_cast<Eigen::Index>(h) * head_dim, head_dim) = heads[h].data();
  }
  return out;
}

}  // namespace

ToyBackend::ToyBackend(ToyBackendConfig config) : config_(config) {
  if (config_.latent_grid.h < 1 || config_.latent_grid.w < 1 || config_.patch < 1 ||
      config_.blocks < 1 || config_.heads < 1 || config_.head_dim < 1 ||
      config_.embed_dim < 1 || config_.max_tokens < 2 ||
      (config_.locality > 0.0 && config_.head_dim < 3) || !(config_.locality >= 0.0) || !(config_.latent_gain >= 0.0) ||
      !(config_.output_gain >= 0.0)) {
    throw Error(ErrorCode::kInvalidRequest, "toy backend configuration must be positive");
  }
  const int channels = 3 * config_.patch * config_.patch;
  const int model_dim = config_.heads * config_.head_dim;
  std::uint64_t stream = splitmix64(config_.seed);
  auto next_seed = [&stream] { return stream = splitmix64(stream); };

  Eigen::HouseholderQR<Matrix> qr(gaussian(next_seed(), channels, channels, 1.0));
  weights_.vae = qr.householderQ() * Matrix::Identity(channels, channels);
  weights_.input = gaussian(next_seed(), channels, model_dim, 1.0 / std::sqrt(channels));
  weights_.time_proj = gaussian(next_seed(), kTimeFeatures, model_dim, 0.5);
  weights_.position = gaussian(next_seed(), static_cast<Eigen::Index>(config_.latent_grid.size()), model_dim, 1.0);
  const double inv_d = 1.0 / std::sqrt(static_cast<double>(model_dim));
  const double inv_e = 1.0 / std::sqrt(static_cast<double>(config_.embed_dim));
  for (int b = 0; b < config_.blocks; ++b) {
    ToyWeights::Block block;
    block.self_q = gaussian(next_seed(), model_dim, model_dim, inv_d);
    block.self_k = gaussian(next_seed(), model_dim, model_dim, inv_d);
    block.self_v = gaussian(next_seed(), model_dim, model_dim, inv_d);
    block.self_out = gaussian(next_seed(), model_dim, model_dim, 0.5 * inv_d);
    block.cross_q = gaussian(next_seed(), model_dim, model_dim, inv_d);
    block.cross_k = gaussian(next_seed(), config_.embed_dim, model_dim, inv_e);
    block.cross_v = gaussian(next_seed(), config_.embed_dim, model_dim, inv_e);
    block.cross_out = gaussian(next_seed(), model_dim, model_dim, 0.5 * inv_d);
    weights_.blocks.push_back(std::move(block));
  }
  weights_.output = gaussian(next_seed(), model_dim, channels, inv_d);

  // q_i . k_j / sqrt(d) = -locality * |p_i - p_j|^2 + (terms constant in j).
  const auto n_tokens = static_cast<Eigen::Index>(config_.latent_grid.size());
  weights_.local_q = Matrix::Zero(n_tokens, config_.head_dim);
  weights_.local_k = Matrix::Zero(n_tokens, config_.head_dim);
  if (config_.locality > 0.0) {
    const double s = std::sqrt(config_.locality * std::sqrt(static_cast<double>(config_.head_dim)));
    const double cy = 0.5 * (config_.latent_grid.h - 1), cx = 0.5 * (config_.latent_grid.w - 1);
    for (int y = 0; y < config_.latent_grid.h; ++y)
      for (int x = 0; x < config_.latent_grid.w; ++x) {
        const Eigen::Index t = y * config_.latent_grid.w + x;
        const double py = y - cy, px = x - cx;
        weights_.local_q.row(t).head(3) << 2.0 * s * py, 2.0 * s * px, s;
        weights_.local_k.row(t).head(3) << s * py, s * px, -s * (py * py + px * px);
      }
  }

  descriptor_.name = "toy";
  descriptor_.latent_shape = {1, channels, config_.latent_grid.h, config_.latent_grid.w};
  descriptor_.image_height = config_.latent_grid.h * config_.patch;
  descriptor_.image_width = config_.latent_grid.w * config_.patch;
  for (int b = 0; b < config_.blocks; ++b) {
    descriptor_.sites.push_back(
        {AttentionKind::kSelf, b, config_.latent_grid, config_.heads, config_.head_dim});
    descriptor_.sites.push_back(
        {AttentionKind::kCross, b, config_.latent_grid, config_.heads, config_.head_dim});
  }
  std::ostringstream fp;
  fp << "toy:seed=" << config_.seed << ":grid=" << config_.latent_grid.h << "x"
     << config_.latent_grid.w << ":patch=" << config_.patch << ":blocks=" << config_.blocks
     << ":heads=" << config_.heads << "x" << config_.head_dim
     << ":embed=" << config_.embed_dim << ":gain=" << config_.output_gain
     << ":latent=" << config_.latent_gain << ":local=" << config_.locality;
  descriptor_.fingerprint = fp.str();
  descriptor_.validate();
}

std::vector<std::string> ToyBackend::tokenize(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::vector<double> ToyBackend::token_vector(const std::string& token) const {
  auto v = seeded_normals(fnv1a64(token) ^ config_.seed, static_cast<std::size_t>(config_.embed_dim));
  for (double& x : v) x /= std::sqrt(static_cast<double>(config_.embed_dim));
  return v;
}

PromptEmbedding ToyBackend::encode_text(const std::string& prompt, const std::string& object_word) {
  auto words = tokenize(prompt);
  PromptEmbedding out;
  const auto max_words = static_cast<std::size_t>(config_.max_tokens - 2);
  if (words.size() > max_words) {
    words.resize(max_words);
    out.truncated = true;
  }
  out.token_texts.push_back("<bos>");
  out.token_texts.insert(out.token_texts.end(), words.begin(), words.end());
  out.token_texts.push_back("<eos>");

  out.token_embeddings.resize(static_cast<Eigen::Index>(out.token_texts.size()), config_.embed_dim);
  for (std::size_t i = 0; i < out.token_texts.size(); ++i) {
    const auto v = token_vector(out.token_texts[i]);
    for (int j = 0; j < config_.embed_dim; ++j) {
      out.token_embeddings(static_cast<Eigen::Index>(i), j) = v[static_cast<std::size_t>(j)];
    }
  }

  const auto needle = tokenize(object_word);
  std::vector<std::size_t> positions;
  if (!needle.empty()) {
    for (std::size_t start = 1; start + needle.size() <= out.token_texts.size() - 1; ++start) {
      bool match = true;
      for (std::size_t j = 0; j < needle.size() && match; ++j) {
        match = out.token_texts[start + j] == needle[j];
      }
      if (match) {
        for (std::size_t j = 0; j < needle.size(); ++j) {
          if (positions.empty() || positions.back() < start + j) positions.push_back(start + j);
        }
      }
    }
  }
  out.object_token_positions = IndexList(std::move(positions));
  return out;
}

LatentTensor ToyBackend::encode_image(const Image& image) {
  if (image.channels != 3 || image.height != descriptor_.image_height ||
      image.width != descriptor_.image_width) {
    throw DimensionError("toy backend expects a " + std::to_string(descriptor_.image_height) +
                         "x" + std::to_string(descriptor_.image_width) + " RGB image");
  }
  const int p = config_.patch;
  const auto channels = weights_.vae.rows();
  LatentTensor z = LatentTensor::zeros(descriptor_.latent_shape);
  Eigen::VectorXd patch(channels);
  for (int y = 0; y < config_.latent_grid.h; ++y) {
    for (int x = 0; x < config_.latent_grid.w; ++x) {
      Eigen::Index i = 0;
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          for (int c = 0; c < 3; ++c) patch(i++) = 2.0 * image.at(y * p + dy, x * p + dx, c) - 1.0;
      const Eigen::VectorXd code = weights_.vae * patch;
      for (Eigen::Index c = 0; c < channels; ++c) z.at(0, static_cast<int>(c), y, x) = code(c);
    }
  }
  return z;
}

Image ToyBackend::decode_latent(const LatentTensor& latent) {
  if (!(latent.shape() == descriptor_.latent_shape)) {
    throw DimensionError("latent does not match the toy backend's latent shape");
  }
  const int p = config_.patch;
  const auto channels = weights_.vae.rows();
  Image out = Image::filled(descriptor_.image_height, descriptor_.image_width, 3, 0.0);
  Eigen::VectorXd code(channels);
  for (int y = 0; y < config_.latent_grid.h; ++y) {
    for (int x = 0; x < config_.latent_grid.w; ++x) {
      for (Eigen::Index c = 0; c < channels; ++c) code(c) = latent.at(0, static_cast<int>(c), y, x);
      const Eigen::VectorXd patch = weights_.vae.transpose() * code;
      Eigen::Index i = 0;
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          for (int c = 0; c < 3; ++c) out.at(y * p + dy, x * p + dx, c) = 0.5 * (patch(i++) + 1.0);
    }
  }
  return out;
}

std::vector<double> ToyBackend::time_features(int timestep) {
  const double s = std::numbers::pi * static_cast<double>(timestep) / 1000.0;
  return {std::sin(s), std::cos(s), std::sin(4.0 * s), std::cos(4.0 * s)};
}

double ToyBackend::output_scale(int timestep) const {
  return config_.output_gain *
         (1.0 + 0.25 * std::sin(std::numbers::pi * static_cast<double>(timestep) / 1000.0));
}

NoiseResult ToyBackend::do_predict_noise(const LatentTensor& z, int timestep,
                                         const PromptEmbedding& cond,
                                         const ForwardOptions& options) {
  if (cond.token_embeddings.cols() != config_.embed_dim) {
    throw DimensionError("prompt embedding dim does not match the toy text encoder");
  }
  for (const auto* extra : options.extra_conds) {
    if (extra == nullptr || extra->token_embeddings.cols() != config_.embed_dim || extra->n_tokens() < 1) {
      throw DimensionError("extra conditioning does not match the toy text encoder");
    }
  }
  const Grid grid = config_.latent_grid;
  const auto n = static_cast<Eigen::Index>(grid.size());
  const auto channels = static_cast<Eigen::Index>(descriptor_.latent_shape.channels);
  const int hd = config_.head_dim;

  Matrix tokens(n, channels);
  for (int y = 0; y < grid.h; ++y)
    for (int x = 0; x < grid.w; ++x)
      for (Eigen::Index c = 0; c < channels; ++c) tokens(y * grid.w + x, c) = z.at(0, static_cast<int>(c), y, x);

  const auto tf = time_features(timestep);
  Eigen::RowVectorXd temb = Eigen::RowVectorXd::Zero(weights_.time_proj.cols());
  for (int j = 0; j < kTimeFeatures; ++j) temb += tf[static_cast<std::size_t>(j)] * weights_.time_proj.row(j);

  Matrix hidden = config_.latent_gain * (tokens * weights_.input) + weights_.position;
  hidden.rowwise() += temb;

  NoiseResult result;
  for (int b = 0; b < config_.blocks; ++b) {
    const auto& w = weights_.blocks[static_cast<std::size_t>(b)];

    AttentionCall self_call;
    self_call.site = {options.step_index, b, AttentionKind::kSelf, grid};
    self_call.q = split_heads(hidden * w.self_q, config_.heads, hd);
    self_call.k = split_heads(hidden * w.self_k, config_.heads, hd);
    if (config_.locality > 0.0) {
      for (int h = 0; h < config_.heads; ++h) {
        self_call.q[h] = FeatureMatrix(self_call.q[h].data() + weights_.local_q);
        self_call.k[h] = FeatureMatrix(self_call.k[h].data() + weights_.local_k);
      }
    }
    self_call.v = split_heads(hidden * w.self_v, config_.heads, hd);
    const auto self_out = run_attention_site(options.hook, self_call);
    result.visited.push_back(self_call.site);
    hidden += merge_heads(self_out, hd) * w.self_out;

    AttentionCall cross_call;
    cross_call.site = {options.step_index, b, AttentionKind::kCross, grid};
    cross_call.q = split_heads(hidden * w.cross_q, config_.heads, hd);
    cross_call.k = split_heads(cond.token_embeddings * w.cross_k, config_.heads, hd);
    cross_call.v = split_heads(cond.token_embeddings * w.cross_v, config_.heads, hd);
    for (const auto* extra : options.extra_conds) {
      cross_call.k_extra.push_back(split_heads(extra->token_embeddings * w.cross_k, config_.heads, hd));
      cross_call.v_extra.push_back(split_heads(extra->token_embeddings * w.cross_v, config_.heads, hd));
    }
    const auto cross_out = run_attention_site(options.hook, cross_call);
    result.visited.push_back(cross_call.site);
    hidden += merge_heads(cross_out, hd) * w.cross_out;
  }

  const Matrix eps_tokens = (hidden * weights_.output) * output_scale(timestep);
  LatentTensor eps = LatentTensor::zeros(descriptor_.latent_shape, timestep);
  for (int y = 0; y < grid.h; ++y)
    for (int x = 0; x < grid.w; ++x)
      for (Eigen::Index c = 0; c < channels; ++c) eps.at(0, static_cast<int>(c), y, x) = eps_tokens(y * grid.w + x, c);
  if (!eps.all_finite()) {
    throw Error(ErrorCode::kInversion, "toy backend produced a non-finite noise estimate");
  }
  result.eps = std::move(eps);
  return result;
}

}  // namespace maskedit
