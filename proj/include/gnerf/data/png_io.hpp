#pragma once

#include <gnerf/core/image.hpp>

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace gnerf::data {

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// Rounds every channel to the nearest 8-bit level, i.e. what a PNG round trip keeps.
inline Image quantize(const Image& img) {
  Image q = img;
  for (auto& v : q.rgb) v = static_cast<float>(to_byte(v)) / 255.0f;
  return q;
}

inline void write_png(const std::string& path, const Image& img) {
  std::vector<std::uint8_t> bytes(img.rgb.size());
  std::transform(img.rgb.begin(), img.rgb.end(), bytes.begin(), to_byte);
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path + ": " + pi.message);
}

inline Image read_png(const std::string& path) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str())) throw IoError("cannot read PNG " + path + ": " + pi.message);
  pi.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw IoError("cannot decode PNG " + path + ": " + pi.message);
  }
  Image img(static_cast<int>(pi.width), static_cast<int>(pi.height));
  for (std::size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = static_cast<float>(bytes[i]) / 255.0f;
  return img;
}

}  // namespace gnerf::data
