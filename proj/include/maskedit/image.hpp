// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace maskedit {

// Interleaved HWC pixels, nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<double> pixels;

  static Image filled(int height, int width, int channels, double value);

  double& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool empty() const { return pixels.empty(); }
  bool operator==(const Image&) const = default;
};

Image load_png(const std::filesystem::path& path, int channels = 3);
Image decode_png(const std::string& bytes, int channels = 3);
// Values are clamped to [0, 1] and rounded to 8 bits.
void save_png(const Image& image, const std::filesystem::path& path);
std::string encode_png(const Image& image);

Image resize_bilinear(const Image& image, int height, int width);

// Peak signal-to-noise ratio over [0, 1] pixels; +inf for identical images.
double psnr(const Image& a, const Image& b);
double mean_abs_difference(const Image& a, const Image& b);

}  // namespace maskedit
