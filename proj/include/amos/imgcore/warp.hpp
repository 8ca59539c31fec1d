#pragma once

#include "amos/imgcore/homography.hpp"
#include "amos/imgcore/image.hpp"

#include <cmath>
#include <stdexcept>

namespace amos {

/// Bilinear sample; caller guarantees img.contains(x, y). Exact at integer
/// coordinates.
inline float bilinear(const GrayImage& img, double x, double y) noexcept {
  const int x0 = std::min(static_cast<int>(std::floor(x)), img.width() - 1);
  const int y0 = std::min(static_cast<int>(std::floor(y)), img.height() - 1);
  const int x1 = std::min(x0 + 1, img.width() - 1);
  const int y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = (1.0 - fx) * img(x0, y0) + fx * img(x1, y0);
  const double bottom = (1.0 - fx) * img(x0, y1) + fx * img(x1, y1);
  return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

/// Bilinear sample with coordinates clamped to the raster.
inline float bilinear_clamped(const GrayImage& img, double x, double y) noexcept {
  return bilinear(img, std::clamp(x, 0.0, static_cast<double>(img.width() - 1)),
                  std::clamp(y, 0.0, static_cast<double>(img.height() - 1)));
}

struct WarpResult {
  GrayImage image;
  ValidityMask mask;
};

/// Inverse mapping: output(p) = img(h * p). Pixels whose source lies outside
/// the input raster are set to 0 and flagged invalid.
inline WarpResult warp_image(const GrayImage& img, const Homography& h, int out_w, int out_h) {
  if (std::abs(h.matrix().determinant()) <= 1e-12) throw std::invalid_argument("warp_image: singular homography");
  WarpResult r{GrayImage(out_w, out_h), ValidityMask{out_w, out_h, {}}};
  r.mask.valid.assign(static_cast<std::size_t>(out_w) * static_cast<std::size_t>(out_h), 0);
  const Eigen::Matrix3d& m = h.matrix();
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const double zx = m(0, 0) * x + m(0, 1) * y + m(0, 2);
      const double zy = m(1, 0) * x + m(1, 1) * y + m(1, 2);
      const double zw = m(2, 0) * x + m(2, 1) * y + m(2, 2);
      if (std::abs(zw) < 1e-12) continue;
      const double sx = zx / zw;
      const double sy = zy / zw;
      if (!img.contains(sx, sy)) continue;
      r.image(x, y) = bilinear(img, sx, sy);
      r.mask.valid[static_cast<std::size_t>(y) * static_cast<std::size_t>(out_w) + static_cast<std::size_t>(x)] = 1;
    }
  }
  return r;
}

}  // namespace amos
