#pragma once

#include "amos/imgcore/filters.hpp"
#include "amos/imgcore/image.hpp"
#include "amos/imgcore/warp.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <type_traits>
#include <vector>

namespace amos::geom {

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double response = 0.0;
  double scale = 16.0;
};

struct HarrisOptions {
  double derivative_sigma = 0.7;
  double integration_sigma = 1.0;
  double k = 0.04;
  double relative_threshold = 0.01;  // fraction of the strongest response
  int border = 8;
};

namespace detail {

inline double parabola_offset(double left, double centre, double right) {
  const double denom = left - 2.0 * centre + right;
  if (std::abs(denom) < 1e-12) return 0.0;
  return std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
}

}  // namespace detail

/// Harris corners: 3x3 non-maximum suppression, strongest max_kp kept,
/// quadratic sub-pixel refinement of the response peak.
inline std::vector<Keypoint> detect_keypoints(const GrayImage& img, int max_kp = 2000, const HarrisOptions& opt = {}) {
  const int w = img.width();
  const int h = img.height();
  if (w < 32 || h < 32) throw std::invalid_argument("detect_keypoints: image must be at least 32x32");
  const GrayImage s = gaussian_blur(img, opt.derivative_sigma);
  GrayImage ixx(w, h), iyy(w, h), ixy(w, h);
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const double gx = 0.5 * (s(x + 1, y) - s(x - 1, y));
      const double gy = 0.5 * (s(x, y + 1) - s(x, y - 1));
      ixx(x, y) = static_cast<float>(gx * gx);
      iyy(x, y) = static_cast<float>(gy * gy);
      ixy(x, y) = static_cast<float>(gx * gy);
    }
  }
  ixx = gaussian_blur(ixx, opt.integration_sigma);
  iyy = gaussian_blur(iyy, opt.integration_sigma);
  ixy = gaussian_blur(ixy, opt.integration_sigma);

  std::vector<double> r(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0.0);
  auto at = [&](int x, int y) -> double& { return r[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)]; };
  double r_max = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double a = ixx(x, y), b = iyy(x, y), c = ixy(x, y);
      const double tr = a + b;
      at(x, y) = a * b - c * c - opt.k * tr * tr;
      r_max = std::max(r_max, at(x, y));
    }
  }
  if (r_max <= 1e-9) return {};
  const double floor = opt.relative_threshold * r_max;
  const int border = std::max(opt.border, 1);

  std::vector<Keypoint> kps;
  for (int y = border; y < h - border; ++y) {
    for (int x = border; x < w - border; ++x) {
      const double v = at(x, y);
      if (v <= floor) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const double n = at(x + dx, y + dy);
          // Plateau ties go to the first pixel in raster order.
          const bool before = dy < 0 || (dy == 0 && dx < 0);
          if (n > v || (before && n == v)) {
            is_max = false;
            break;
          }
        }
      }
      if (!is_max) continue;
      Keypoint kp;
      kp.x = x + detail::parabola_offset(at(x - 1, y), v, at(x + 1, y));
      kp.y = y + detail::parabola_offset(at(x, y - 1), v, at(x, y + 1));
      kp.response = v;
      kps.push_back(kp);
    }
  }
  std::stable_sort(kps.begin(), kps.end(), [](const Keypoint& a, const Keypoint& b) { return a.response > b.response; });
  if (static_cast<int>(kps.size()) > max_kp) kps.resize(static_cast<std::size_t>(std::max(max_kp, 0)));
  return kps;
}

inline constexpr int kPatchSide = 16;
inline constexpr int kDescriptorDim = kPatchSide * kPatchSide;

using DescriptorMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Descriptors {
  DescriptorMatrix vectors;     // one unit-norm row per kept keypoint
  std::vector<int> keypoint_index;  // row -> index into the input keypoint list
};

inline Descriptors describe_keypoints(const GrayImage& img, const std::vector<Keypoint>& kps, double blur_sigma = 1.0) {
  const GrayImage s = gaussian_blur(img, blur_sigma);
  constexpr double half = 0.5 * (kPatchSide - 1);
  Descriptors out;
  std::vector<float> patch(kDescriptorDim);
  std::vector<std::vector<float>> rows;
  for (std::size_t k = 0; k < kps.size(); ++k) {
    const auto& kp = kps[k];
    if (!s.contains(kp.x - half, kp.y - half) || !s.contains(kp.x + half, kp.y + half)) continue;
    for (int j = 0; j < kPatchSide; ++j)
      for (int i = 0; i < kPatchSide; ++i)
        patch[static_cast<std::size_t>(j * kPatchSide + i)] = bilinear(s, kp.x - half + i, kp.y - half + j);
    normalize_patch(patch);
    rows.push_back(patch);
    out.keypoint_index.push_back(static_cast<int>(k));
  }
  out.vectors.resize(static_cast<Eigen::Index>(rows.size()), kDescriptorDim);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < kDescriptorDim; ++c) out.vectors(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  return out;
}

struct Match {
  int a = 0;
  int b = 0;
  float distance = 0.0F;
};

using TentativeMatches = std::vector<Match>;

/// Lowe ratio test (d1/d2 < ratio) on unit-norm rows, then one-to-one by
/// keeping the closer pair when several A rows pick the same B row.
inline TentativeMatches match_ratio(const DescriptorMatrix& da, const DescriptorMatrix& db, double ratio = 0.8) {
  if (da.rows() == 0) throw std::invalid_argument("match_ratio: empty descriptor set A");
  if (db.rows() < 2) throw std::invalid_argument("match_ratio: B needs at least 2 descriptors");
  if (da.cols() != db.cols()) throw std::invalid_argument("match_ratio: dimension mismatch");
  const DescriptorMatrix sim = da * db.transpose();
  std::vector<Match> best_for_b(static_cast<std::size_t>(db.rows()), Match{-1, -1, 0.0F});
  for (Eigen::Index i = 0; i < da.rows(); ++i) {
    // Distance is monotone in similarity for unit rows; track the two largest.
    float s1 = -std::numeric_limits<float>::infinity(), s2 = s1;
    Eigen::Index j1 = -1;
    for (Eigen::Index j = 0; j < db.rows(); ++j) {
      const float v = sim(i, j);
      if (v > s1) {
        s2 = s1;
        s1 = v;
        j1 = j;
      } else if (v > s2) {
        s2 = v;
      }
    }
    const float d1 = std::sqrt(std::max(0.0F, 2.0F - 2.0F * s1));
    const float d2 = std::sqrt(std::max(0.0F, 2.0F - 2.0F * s2));
    if (!(d2 > 0.0F) || !(d1 / d2 < ratio)) continue;
    auto& slot = best_for_b[static_cast<std::size_t>(j1)];
    if (slot.a < 0 || d1 < slot.distance) slot = Match{static_cast<int>(i), static_cast<int>(j1), d1};
  }
  TentativeMatches out;
  for (const auto& m : best_for_b)
    if (m.a >= 0) out.push_back(m);
  std::sort(out.begin(), out.end(), [](const Match& x, const Match& y) { return x.a < y.a; });
  return out;
}

}  // namespace amos::geom
