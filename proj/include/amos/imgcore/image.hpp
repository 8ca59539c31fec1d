#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace amos {

/// Owned single-channel raster, row-major, nominal range [0, 255].
class GrayImage {
 public:
  GrayImage() = default;

  GrayImage(int width, int height, float fill = 0.0F) : width_(width), height_(height) {
    if (width < 1 || height < 1) {
      throw std::invalid_argument("GrayImage: dimensions must be >= 1, got " + std::to_string(width) + "x" +
                                  std::to_string(height));
    }
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }

  GrayImage(int width, int height, std::vector<float> data) : GrayImage(width, height) {
    if (data.size() != data_.size()) throw std::invalid_argument("GrayImage: data length != width*height");
    if (!std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); })) {
      throw std::invalid_argument("GrayImage: non-finite intensity");
    }
    data_ = std::move(data);
  }

  [[nodiscard]] int width() const noexcept { return width_; }
  [[nodiscard]] int height() const noexcept { return height_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] float operator()(int x, int y) const noexcept { return data_[index(x, y)]; }
  float& operator()(int x, int y) noexcept { return data_[index(x, y)]; }

  [[nodiscard]] std::span<const float> pixels() const noexcept { return data_; }
  [[nodiscard]] std::span<float> pixels() noexcept { return data_; }

  [[nodiscard]] bool contains(double x, double y) const noexcept {
    return x >= 0.0 && y >= 0.0 && x <= width_ - 1 && y <= height_ - 1;
  }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  [[nodiscard]] std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// Per-pixel validity flags accompanying a warped image.
struct ValidityMask {
  int width = 0;
  int height = 0;
  std::vector<unsigned char> valid;

  [[nodiscard]] bool operator()(int x, int y) const noexcept {
    return valid[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] != 0;
  }
  [[nodiscard]] std::size_t count() const noexcept {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), static_cast<unsigned char>(1)));
  }
};

/// Interleaved multi-channel raster as delivered by a decoder.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;
};

inline constexpr std::array<double, 3> kLumaWeights{0.299, 0.587, 0.114};

/// Channel order of a 3-channel raster is (R, G, B) against the weights.
inline GrayImage to_gray(const Raster& raster, const std::array<double, 3>& weights = kLumaWeights) {
  const auto n = static_cast<std::size_t>(raster.width) * static_cast<std::size_t>(raster.height);
  if (raster.channels != 1 && raster.channels != 3) {
    throw std::invalid_argument("to_gray: unsupported channel count " + std::to_string(raster.channels));
  }
  if (raster.data.size() != n * static_cast<std::size_t>(raster.channels)) {
    throw std::invalid_argument("to_gray: raster data length mismatch");
  }
  if (raster.channels == 1) return GrayImage(raster.width, raster.height, raster.data);
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* px = &raster.data[3 * i];
    const double v = weights[0] * px[0] + weights[1] * px[1] + weights[2] * px[2];
    // Keep the result inside the channel range even when weights sum to 1 only approximately.
    const double lo = std::min({px[0], px[1], px[2]});
    const double hi = std::max({px[0], px[1], px[2]});
    out[i] = static_cast<float>(std::clamp(v, lo, hi));
  }
  return GrayImage(raster.width, raster.height, std::move(out));
}

}  // namespace amos
