#pragma once

#include "amos/imgcore/image.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <type_traits>
#include <vector>

namespace amos {

/// Population variance of the 4-neighbour Laplacian over interior pixels.
/// The sharpness threshold used by the camera gate is calibrated for this
/// particular stencil; other discretizations need a different threshold.
inline double laplacian_variance(const GrayImage& img) {
  const int w = img.width();
  const int h = img.height();
  if (w < 3 || h < 3) throw std::invalid_argument("laplacian_variance: image smaller than 3x3");
  auto response = [&](int x, int y) {
    return static_cast<double>(img(x, y - 1)) + img(x, y + 1) + img(x - 1, y) + img(x + 1, y) -
           4.0 * static_cast<double>(img(x, y));
  };
  const double n = static_cast<double>(w - 2) * static_cast<double>(h - 2);
  double sum = 0.0;
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) sum += response(x, y);
  const double mean = sum / n;
  double sum_sq = 0.0;
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const double d = response(x, y) - mean;
      sum_sq += d * d;
    }
  }
  return sum_sq / n;
}

inline double mean_intensity(const GrayImage& img) {
  if (img.empty()) throw std::invalid_argument("mean_intensity: empty image");
  const auto px = img.pixels();
  return std::accumulate(px.begin(), px.end(), 0.0) / static_cast<double>(px.size());
}

inline std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0.0) return {1.0};
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : k) v /= total;
  return k;
}

/// Separable Gaussian smoothing with replicated borders.
inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (sigma <= 0.0) return img;
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  const int w = img.width();
  const int h = img.height();
  GrayImage tmp(w, h);
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int xx = std::clamp(x + k, 0, w - 1);
        acc += kernel[static_cast<std::size_t>(k + radius)] * img(xx, y);
      }
      tmp(x, y) = static_cast<float>(acc);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int yy = std::clamp(y + k, 0, h - 1);
        acc += kernel[static_cast<std::size_t>(k + radius)] * tmp(x, yy);
      }
      out(x, y) = static_cast<float>(acc);
    }
  }
  return out;
}

/// Halves resolution by 2x2 averaging. Pixel centre x at the fine level maps
/// to (x - 0.5) / 2 at the coarse level.
inline GrayImage downsample2(const GrayImage& img) {
  const int w = std::max(1, img.width() / 2);
  const int h = std::max(1, img.height() / 2);
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int x0 = std::min(2 * x, img.width() - 1);
      const int x1 = std::min(2 * x + 1, img.width() - 1);
      const int y0 = std::min(2 * y, img.height() - 1);
      const int y1 = std::min(2 * y + 1, img.height() - 1);
      out(x, y) = 0.25F * (img(x0, y0) + img(x1, y0) + img(x0, y1) + img(x1, y1));
    }
  }
  return out;
}

/// Mean/std-normalized (std floored at 1e-8), then L2-normalized in place; a
/// constant vector of norm one stands in when the patch has no contrast.
template <typename Range>
void normalize_patch(Range& v) {
  double mean = 0.0;
  for (auto x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (auto x : v) var += (x - mean) * (x - mean);
  const double sd = std::max(std::sqrt(var / static_cast<double>(v.size())), 1e-8);
  double norm = 0.0;
  for (auto& x : v) {
    x = static_cast<std::remove_reference_t<decltype(x)>>((x - mean) / sd);
    norm += static_cast<double>(x) * x;
  }
  norm = std::sqrt(norm);
  if (norm < 1e-12) {
    const double c = 1.0 / std::sqrt(static_cast<double>(v.size()));
    for (auto& x : v) x = static_cast<std::remove_reference_t<decltype(x)>>(c);
    return;
  }
  for (auto& x : v) x = static_cast<std::remove_reference_t<decltype(x)>>(x / norm);
}

}  // namespace amos
