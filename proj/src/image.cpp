// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "maskedit/error.hpp"

namespace maskedit {
namespace {

png_uint_32 format_for(int channels) {
  switch (channels) {
    case 1: return PNG_FORMAT_GRAY;
    case 3: return PNG_FORMAT_RGB;
    case 4: return PNG_FORMAT_RGBA;
    default: throw Error(ErrorCode::kIo, "unsupported channel count " + std::to_string(channels));
  }
}

Image from_bytes(png_image& info, const std::vector<png_byte>& buffer, int channels) {
  Image out;
  out.height = static_cast<int>(info.height);
  out.width = static_cast<int>(info.width);
  out.channels = channels;
  out.pixels.resize(buffer.size());
  std::transform(buffer.begin(), buffer.end(), out.pixels.begin(),
                 [](png_byte b) { return static_cast<double>(b) / 255.0; });
  return out;
}

std::vector<png_byte> to_bytes(const Image& image) {
  if (image.pixels.size() !=
      static_cast<std::size_t>(image.height) * image.width * image.channels) {
    throw DimensionError("image buffer does not match its dimensions");
  }
  std::vector<png_byte> buffer(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), buffer.begin(), [](double v) {
    const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
    return static_cast<png_byte>(std::lround(c * 255.0));
  });
  return buffer;
}

png_image header_for(const Image& image) {
  png_image info{};
  info.version = PNG_IMAGE_VERSION;
  info.width = static_cast<png_uint_32>(image.width);
  info.height = static_cast<png_uint_32>(image.height);
  info.format = format_for(image.channels);
  return info;
}

}  // namespace

Image Image::filled(int height, int width, int channels, double value) {
  Image out;
  out.height = height;
  out.width = width;
  out.channels = channels;
  out.pixels.assign(static_cast<std::size_t>(height) * width * channels, value);
  return out;
}

Image decode_png(const std::string& bytes, int channels) {
  png_image info{};
  info.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&info, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::kIo, std::string("png decode failed: ") + info.message);
  }
  info.format = format_for(channels);
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(info));
  if (!png_image_finish_read(&info, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&info);
    throw Error(ErrorCode::kIo, std::string("png decode failed: ") + info.message);
  }
  return from_bytes(info, buffer, channels);
}

Image load_png(const std::filesystem::path& path, int channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes, channels);
  } catch (const Error& e) {
    throw Error(ErrorCode::kIo, path.string() + ": " + e.what());
  }
}

std::string encode_png(const Image& image) {
  auto buffer = to_bytes(image);
  png_image info = header_for(image);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&info, nullptr, &size, 0, buffer.data(), 0, nullptr)) {
    throw Error(ErrorCode::kIo, std::string("png encode failed: ") + info.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&info, out.data(), &size, 0, buffer.data(), 0, nullptr)) {
    throw Error(ErrorCode::kIo, std::string("png encode failed: ") + info.message);
  }
  out.resize(size);
  return out;
}

void save_png(const Image& image, const std::filesystem::path& path) {
  const std::string bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (height < 1 || width < 1) throw DimensionError("resize target must be positive");
  if (image.height == height && image.width == width) return image;
  Image out = Image::filled(height, width, image.channels, 0.0);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
        const double bottom = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = top * (1 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

double mean_abs_difference(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw DimensionError("image sizes differ");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(a.pixels[i] - b.pixels[i]);
  return a.pixels.empty() ? 0.0 : s / static_cast<double>(a.pixels.size());
}

double psnr(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw DimensionError("image sizes differ");
  }
  double mse = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = a.pixels[i] - b.pixels[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.pixels.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace maskedit
