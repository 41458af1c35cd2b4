#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "refinery/errors.hpp"
#include "refinery/image.hpp"
#include "refinery/rng.hpp"

// The stochastic crop function: random area on [8%, 100%] of the source,
// log-uniform aspect ratio, fair-coin horizontal flip, bilinear resize to the
// network input size.

namespace refinery {

struct CropSpec {
  int x = 0, y = 0;  // top-left corner, source pixels
  int w = 0, h = 0;  // extent, source pixels
  bool hflip = false;

  double area_fraction(int source_w, int source_h) const {
    return static_cast<double>(w) * h /
           (static_cast<double>(source_w) * source_h);
  }
  bool in_bounds(int source_w, int source_h) const {
    return x >= 0 && y >= 0 && w >= 1 && h >= 1 && x + w <= source_w &&
           y + h <= source_h;
  }
  bool operator==(const CropSpec&) const = default;
};

constexpr double kMinCropArea = 0.08;
constexpr double kMinAspect = 3.0 / 4.0;
constexpr double kMaxAspect = 4.0 / 3.0;

/// Integer crop extent for a target area fraction and aspect ratio (w/h).
/// Rounds to whole pixels, clamps into the source, and restores the minimum
/// area if rounding undershot it.
inline void crop_extent_for(double area_frac, double aspect, int source_w,
                            int source_h, int& w, int& h) {
  const double target = area_frac * source_w * source_h;
  w = static_cast<int>(std::lround(std::sqrt(target * aspect)));
  h = static_cast<int>(std::lround(std::sqrt(target / aspect)));
  w = std::clamp(w, 1, source_w);
  h = std::clamp(h, 1, source_h);
  while (static_cast<double>(w) * h < kMinCropArea * source_w * source_h) {
    if (w < source_w)
      ++w;
    else if (h < source_h)
      ++h;
    else
      break;
  }
}

/// Draws a crop spec with area fraction uniform on [0.08, 1] and aspect ratio
/// log-uniform on [3/4, 4/3] restricted to extents that fit the source. The
/// restriction keeps the area distribution exactly uniform on square sources;
/// a plain accept/reject over the joint draw would starve large areas. When
/// no aspect in range fits (extreme source shapes), the draw is retried up to
/// 10 times and then falls back to the full image.
inline CropSpec sample_crop(Rng& rng, int source_w, int source_h) {
  if (source_w < 1 || source_h < 1)
    throw InvalidInputError("sample_crop: empty source image");
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int attempt = 0; attempt < 10; ++attempt) {
    const double area_frac = kMinCropArea + (1.0 - kMinCropArea) * unit(rng);
    const double target = area_frac * source_w * source_h;
    // w = sqrt(target * r) <= W  and  h = sqrt(target / r) <= H bound the
    // feasible aspect-ratio window.
    const double r_lo = std::max(kMinAspect, target / (static_cast<double>(source_h) * source_h));
    const double r_hi = std::min(kMaxAspect, static_cast<double>(source_w) * source_w / target);
    const double u = unit(rng);
    if (r_lo > r_hi) continue;
    const double aspect = std::exp(std::log(r_lo) + u * (std::log(r_hi) - std::log(r_lo)));

    CropSpec spec;
    crop_extent_for(area_frac, aspect, source_w, source_h, spec.w, spec.h);
    std::uniform_int_distribution<int> dx(0, source_w - spec.w);
    std::uniform_int_distribution<int> dy(0, source_h - spec.h);
    spec.x = dx(rng);
    spec.y = dy(rng);
    spec.hflip = unit(rng) < 0.5;
    return spec;
  }

  CropSpec spec;
  spec.x = 0;
  spec.y = 0;
  spec.w = source_w;
  spec.h = source_h;
  spec.hflip = unit(rng) < 0.5;
  return spec;
}

/// Largest centered square of the source.
inline CropSpec center_crop_spec(int source_w, int source_h) {
  const int side = std::min(source_w, source_h);
  CropSpec spec;
  spec.x = (source_w - side) / 2;
  spec.y = (source_h - side) / 2;
  spec.w = side;
  spec.h = side;
  spec.hflip = false;
  return spec;
}

/// Bilinear resize of the crop window to out_size x out_size with corner
/// alignment (output corners sample the window corners exactly), followed by
/// an optional horizontal mirror.
inline Image extract_crop(const Image& img, const CropSpec& spec,
                          std::size_t out_size) {
  if (!spec.in_bounds(static_cast<int>(img.width), static_cast<int>(img.height)))
    throw InvalidInputError("extract_crop: crop spec out of bounds");
  if (out_size == 0) throw InvalidInputError("extract_crop: zero output size");

  Image out(out_size, out_size, img.channels);
  const auto src_pos = [](int origin, int extent, std::size_t o,
                          std::size_t n) -> double {
    if (n > 1)
      return origin + static_cast<double>(o) * (extent - 1) / static_cast<double>(n - 1);
    return origin + (extent - 1) / 2.0;
  };

  for (std::size_t oy = 0; oy < out_size; ++oy) {
    const double sy = src_pos(spec.y, spec.h, oy, out_size);
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, static_cast<std::size_t>(spec.y + spec.h - 1));
    const float fy = static_cast<float>(sy - static_cast<double>(y0));
    for (std::size_t ox = 0; ox < out_size; ++ox) {
      const double sx = src_pos(spec.x, spec.w, ox, out_size);
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, static_cast<std::size_t>(spec.x + spec.w - 1));
      const float fx = static_cast<float>(sx - static_cast<double>(x0));
      const std::size_t dst_x = spec.hflip ? out_size - 1 - ox : ox;
      for (std::size_t c = 0; c < img.channels; ++c) {
        const float top = img.at(y0, x0, c) * (1.0f - fx) + img.at(y0, x1, c) * fx;
        const float bot = img.at(y1, x0, c) * (1.0f - fx) + img.at(y1, x1, c) * fx;
        out.at(oy, dst_x, c) = top * (1.0f - fy) + bot * fy;
      }
    }
  }
  return out;
}

/// Deterministic evaluation view: largest centered square resized to out_size.
inline Image center_crop(const Image& img, std::size_t out_size) {
  return extract_crop(
      img, center_crop_spec(static_cast<int>(img.width), static_cast<int>(img.height)),
      out_size);
}

} // namespace refinery
