#pragma once

#include "amos/common/rng.hpp"
#include "amos/imgcore/homography.hpp"

#include <Eigen/Core>
#include <Eigen/SVD>

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace amos::geom {

/// A tentative point pair; the estimated homography maps a onto b.
struct Correspondence {
  Eigen::Vector2d a;
  Eigen::Vector2d b;
};

struct RansacOptions {
  double inlier_px = 2.0;
  int max_iters = 2000;
  double confidence = 0.999;
};

struct RansacResult {
  Homography h;
  int inlier_count = 0;
  std::vector<bool> inliers;
  int iterations = 0;
  int best_hypothesis_inliers = 0;  // largest support seen among minimal-sample models
};

namespace detail {

// Similarity taking the points to centroid 0 and mean distance sqrt(2).
inline Eigen::Matrix3d hartley_normalizer(std::span<const Eigen::Vector2d> pts) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - c).norm();
  mean_dist /= static_cast<double>(pts.size());
  const double s = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

inline bool collinear(const Eigen::Vector2d& p, const Eigen::Vector2d& q, const Eigen::Vector2d& r) {
  const Eigen::Vector2d u = q - p;
  const Eigen::Vector2d v = r - p;
  const double cross = u.x() * v.y() - u.y() * v.x();
  return std::abs(cross) <= 1e-6 * u.norm() * v.norm() + 1e-12;
}

inline bool degenerate_sample(const std::array<Eigen::Vector2d, 4>& p) {
  return collinear(p[0], p[1], p[2]) || collinear(p[0], p[1], p[3]) || collinear(p[0], p[2], p[3]) ||
         collinear(p[1], p[2], p[3]);
}

}  // namespace detail

/// Normalized direct linear transform over all given pairs (least squares
/// for more than four). Returns nullopt when the solution is degenerate.
inline std::optional<Homography> fit_homography_dlt(std::span<const Correspondence> pairs) {
  if (pairs.size() < 4) return std::nullopt;
  std::vector<Eigen::Vector2d> pa, pb;
  pa.reserve(pairs.size());
  pb.reserve(pairs.size());
  for (const auto& c : pairs) {
    pa.push_back(c.a);
    pb.push_back(c.b);
  }
  const Eigen::Matrix3d ta = detail::hartley_normalizer(pa);
  const Eigen::Matrix3d tb = detail::hartley_normalizer(pb);
  Eigen::MatrixXd a(2 * static_cast<Eigen::Index>(pairs.size()), 9);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Eigen::Vector3d x = ta * pa[i].homogeneous();
    const Eigen::Vector3d y = tb * pb[i].homogeneous();
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << 0, 0, 0, -y.z() * x.x(), -y.z() * x.y(), -y.z() * x.z(), y.y() * x.x(), y.y() * x.y(), y.y() * x.z();
    a.row(r + 1) << y.z() * x.x(), y.z() * x.y(), y.z() * x.z(), 0, 0, 0, -y.x() * x.x(), -y.x() * x.y(), -y.x() * x.z();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Eigen::Matrix3d m = tb.inverse() * hn * ta;
  if (!m.allFinite() || std::abs(m(2, 2)) < 1e-12) return std::nullopt;
  try {
    return Homography(m);
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

/// Symmetric transfer error sqrt(|Ha - b|^2 + |H^-1 b - a|^2).
inline double symmetric_transfer_error(const Homography& h, const Homography& h_inv, const Correspondence& c) {
  const double fwd = (h.apply(c.a) - c.b).squaredNorm();
  const double bwd = (h_inv.apply(c.b) - c.a).squaredNorm();
  const double e = std::sqrt(fwd + bwd);
  return std::isfinite(e) ? e : std::numeric_limits<double>::infinity();
}

namespace detail {

inline int score_model(const Homography& h, std::span<const Correspondence> pairs, double inlier_px,
                       std::vector<bool>& mask, double& total_error) {
  const Homography h_inv = h.inverse();
  int count = 0;
  total_error = 0.0;
  mask.assign(pairs.size(), false);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double e = symmetric_transfer_error(h, h_inv, pairs[i]);
    if (e < inlier_px) {
      mask[i] = true;
      ++count;
      total_error += e;
    }
  }
  return count;
}

}  // namespace detail

/// RANSAC over 4-point samples with normalized DLT hypotheses, adaptive
/// iteration count, and a least-squares refit on the best consensus set.
/// Returns nullopt if no model reaches four inliers.
inline std::optional<RansacResult> estimate_homography_ransac(std::span<const Correspondence> pairs,
                                                              const RansacOptions& opt, std::uint64_t seed) {
  const auto n = pairs.size();
  if (n < 4) throw std::invalid_argument("estimate_homography_ransac: need at least 4 correspondences");
  auto rng = make_rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  std::optional<Homography> best;
  int best_count = -1;
  double best_error = 0.0;
  std::vector<bool> best_mask, mask;
  RansacResult res;

  long long needed = opt.max_iters;
  int it = 0;
  for (; it < opt.max_iters && it < needed; ++it) {
    std::array<std::size_t, 4> idx{};
    for (std::size_t k = 0; k < 4; ++k) {
      bool fresh = false;
      while (!fresh) {
        idx[k] = pick(rng);
        fresh = std::find(idx.begin(), idx.begin() + static_cast<long>(k), idx[k]) == idx.begin() + static_cast<long>(k);
      }
    }
    std::array<Eigen::Vector2d, 4> sa{}, sb{};
    std::array<Correspondence, 4> sample{};
    for (std::size_t k = 0; k < 4; ++k) {
      sample[k] = pairs[idx[k]];
      sa[k] = sample[k].a;
      sb[k] = sample[k].b;
    }
    if (detail::degenerate_sample(sa) || detail::degenerate_sample(sb)) continue;
    const auto h = fit_homography_dlt(sample);
    if (!h) continue;
    double err = 0.0;
    const int count = detail::score_model(*h, pairs, opt.inlier_px, mask, err);
    res.best_hypothesis_inliers = std::max(res.best_hypothesis_inliers, count);
    if (count > best_count || (count == best_count && err < best_error)) {
      best = h;
      best_count = count;
      best_error = err;
      best_mask = mask;
      const double w = static_cast<double>(count) / static_cast<double>(n);
      const double p_fail = 1.0 - std::pow(w, 4);
      if (p_fail <= 0.0) {
        needed = it + 1;
      } else if (p_fail < 1.0) {
        const double k = std::log(1.0 - opt.confidence) / std::log(p_fail);
        needed = static_cast<long long>(std::min(std::ceil(k), static_cast<double>(opt.max_iters)));
      }
    }
  }
  if (!best || best_count < 4) return std::nullopt;

  // Refit on the consensus set; accept only while support does not shrink.
  for (int refit = 0; refit < 3; ++refit) {
    std::vector<Correspondence> in;
    for (std::size_t i = 0; i < n; ++i)
      if (best_mask[i]) in.push_back(pairs[i]);
    const auto h = fit_homography_dlt(in);
    if (!h) break;
    double err = 0.0;
    const int count = detail::score_model(*h, pairs, opt.inlier_px, mask, err);
    if (count < best_count) break;
    const bool same = count == best_count && mask == best_mask;
    best = h;
    best_count = count;
    best_mask = mask;
    if (same) break;
  }
  res.h = *best;
  res.inlier_count = best_count;
  res.inliers = std::move(best_mask);
  res.iterations = it;
  return res;
}

}  // namespace amos::geom
