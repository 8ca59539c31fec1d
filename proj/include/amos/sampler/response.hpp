#pragma once

#include "amos/geom/views.hpp"
#include "amos/imgcore/filters.hpp"
#include "amos/imgcore/image.hpp"
#include "amos/imgcore/warp.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace amos::sampler {

/// Row-major real-valued map over the reference frame.
struct ScalarField {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  ScalarField() = default;
  ScalarField(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0.0) {}

  double& operator()(int x, int y) { return values[index(x, y)]; }
  double operator()(int x, int y) const { return values[index(x, y)]; }
  [[nodiscard]] std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
  }
};

/// |det Hessian| of the sigma-smoothed image; the one-pixel border is zero.
inline ScalarField hessian_response(const GrayImage& img, double sigma) {
  if (img.width() < 7 || img.height() < 7) throw std::invalid_argument("hessian_response: image must be at least 7x7");
  const GrayImage s = sigma > 0.0 ? gaussian_blur(img, sigma) : img;
  ScalarField r(img.width(), img.height());
  for (int y = 1; y + 1 < img.height(); ++y) {
    for (int x = 1; x + 1 < img.width(); ++x) {
      const double c = s(x, y);
      const double ixx = s(x + 1, y) - 2.0 * c + s(x - 1, y);
      const double iyy = s(x, y + 1) - 2.0 * c + s(x, y - 1);
      const double ixy = 0.25 * (s(x + 1, y + 1) - s(x - 1, y + 1) - s(x + 1, y - 1) + s(x - 1, y - 1));
      r(x, y) = std::abs(ixx * iyy - ixy * ixy);
    }
  }
  return r;
}

enum class MaskMode { average_then_response, response_then_average, reference_only };

inline const char* to_string(MaskMode m) {
  switch (m) {
    case MaskMode::average_then_response: return "average-then-response";
    case MaskMode::response_then_average: return "response-then-average";
    case MaskMode::reference_only: return "reference-only";
  }
  return "?";
}

inline MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "average-then-response") return MaskMode::average_then_response;
  if (s == "response-then-average") return MaskMode::response_then_average;
  if (s == "reference-only") return MaskMode::reference_only;
  throw std::invalid_argument("unknown mask mode: " + s);
}

/// Sampling density over reference pixels; weights sum to one.
struct ResponseMask {
  int width = 0;
  int height = 0;
  std::vector<double> weights;
  bool uniform_fallback = false;  // response was zero everywhere on the valid region

  [[nodiscard]] double operator()(int x, int y) const {
    return weights[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
  }
};

/// Members resampled into the reference frame, in member order.
inline std::vector<WarpResult> warp_to_reference(const geom::View& view, std::span<const GrayImage> images) {
  if (images.size() != view.members.size()) throw std::invalid_argument("warp_to_reference: image count mismatch");
  const int w = images[0].width();
  const int h = images[0].height();
  std::vector<WarpResult> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out.push_back(warp_image(images[i], view.members[i].to_reference.inverse(), w, h));
  return out;
}

/// Response map per mode, restricted to pixels valid in every member and
/// normalized. warped[0] is the reference.
inline ResponseMask build_probability_mask(std::span<const WarpResult> warped, MaskMode mode, double sigma = 2.0) {
  if (warped.empty()) throw std::invalid_argument("build_probability_mask: empty view");
  const int w = warped[0].image.width();
  const int h = warped[0].image.height();
  const auto n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<char> valid(n, 1);
  for (const auto& m : warped) {
    if (m.image.width() != w || m.image.height() != h) throw std::invalid_argument("build_probability_mask: size mismatch");
    for (std::size_t i = 0; i < n; ++i) valid[i] = static_cast<char>(valid[i] && m.mask.valid[i]);
  }

  ScalarField resp(w, h);
  switch (mode) {
    case MaskMode::reference_only:
      resp = hessian_response(warped[0].image, sigma);
      break;
    case MaskMode::average_then_response: {
      GrayImage avg(w, h);
      for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        int count = 0;
        for (const auto& m : warped) {
          if (!m.mask.valid[i]) continue;
          sum += m.image.pixels()[i];
          ++count;
        }
        avg.pixels()[i] = count > 0 ? static_cast<float>(sum / count) : 0.0F;
      }
      resp = hessian_response(avg, sigma);
      break;
    }
    case MaskMode::response_then_average:
      for (const auto& m : warped) {
        const ScalarField r = hessian_response(m.image, sigma);
        for (std::size_t i = 0; i < n; ++i) resp.values[i] += r.values[i];
      }
      for (auto& v : resp.values) v /= static_cast<double>(warped.size());
      break;
  }

  ResponseMask mask{w, h, std::vector<double>(n, 0.0), false};
  double total = 0.0;
  std::size_t valid_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!valid[i]) continue;
    mask.weights[i] = resp.values[i];
    total += resp.values[i];
    ++valid_count;
  }
  if (valid_count == 0) throw std::runtime_error("build_probability_mask: no pixel is valid in every member");
  if (!(total > 0.0) || !std::isfinite(total)) {
    mask.uniform_fallback = true;
    for (std::size_t i = 0; i < n; ++i) mask.weights[i] = valid[i] ? 1.0 / static_cast<double>(valid_count) : 0.0;
    return mask;
  }
  for (auto& v : mask.weights) v /= total;
  return mask;
}

}  // namespace amos::sampler
