#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "refinery/errors.hpp"
#include "refinery/serialize.hpp"

namespace refinery {

/// Dense H x W x C float image, pixel values in [0,1] until standardized.
struct Image {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<float> data; // row-major HWC

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c)
      : height(h), width(w), channels(c), data(h * w * c, 0.0f) {}

  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * channels + c];
  }
  float& at(std::size_t y, std::size_t x, std::size_t c) {
    return data[(y * width + x) * channels + c];
  }
};

namespace detail {
inline int ppm_next_int(std::istream& is, const std::string& path) {
  // Skips whitespace and '#' comments per the netpbm grammar.
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = is.get();
  }
  if (c == EOF || !std::isdigit(c))
    throw IoError(path + ": malformed PPM header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = is.get();
  }
  return value;
}
} // namespace detail

/// Reads a binary (P6) or ASCII (P3) PPM into a [0,1] float image.
inline Image read_ppm(const std::string& path) {
  auto is = open_input(path);
  char m0 = static_cast<char>(is.get());
  char m1 = static_cast<char>(is.get());
  if (m0 != 'P' || (m1 != '6' && m1 != '3'))
    throw IoError(path + ": not a P3/P6 PPM image");
  const bool binary = m1 == '6';
  const int w = detail::ppm_next_int(is, path);
  const int h = detail::ppm_next_int(is, path);
  const int maxval = detail::ppm_next_int(is, path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw IoError(path + ": unsupported PPM dimensions or depth");
  Image img(static_cast<std::size_t>(h), static_cast<std::size_t>(w), 3);
  const float scale = 1.0f / static_cast<float>(maxval);
  if (binary) {
    std::vector<std::uint8_t> raw(img.data.size());
    read_bytes(is, raw.data(), raw.size(), "PPM pixels");
    for (std::size_t i = 0; i < raw.size(); ++i)
      img.data[i] = static_cast<float>(raw[i]) * scale;
  } else {
    for (std::size_t i = 0; i < img.data.size(); ++i)
      img.data[i] = static_cast<float>(detail::ppm_next_int(is, path)) * scale;
  }
  return img;
}

inline void write_ppm(const Image& img, const std::string& path) {
  if (img.channels != 3)
    throw InvalidInputError("write_ppm: only 3-channel images supported");
  auto os = open_output(path);
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> raw(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const float v = std::clamp(img.data[i], 0.0f, 1.0f);
    raw[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  write_bytes(os, raw.data(), raw.size());
}

} // namespace refinery
