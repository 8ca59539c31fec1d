#pragma once

#include "amos/common/rng.hpp"
#include "amos/geom/views.hpp"
#include "amos/imgcore/image.hpp"
#include "amos/imgcore/warp.hpp"
#include "amos/sampler/response.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace amos::sampler {

/// Square of side `scale` (reference pixels) centred at (x, y), rotated by
/// `angle` radians.
struct PatchSpec {
  double x = 0.0;
  double y = 0.0;
  double scale = 96.0;
  double angle = 0.0;

  bool operator==(const PatchSpec&) const = default;
};

struct SamplingRanges {
  double scale_min = 67.0;
  double scale_max = 138.0;
  double angle_min = -15.0 * std::numbers::pi / 180.0;
  double angle_max = 15.0 * std::numbers::pi / 180.0;

  void validate() const {
    if (!(scale_min > 0.0) || !(scale_max >= scale_min)) throw std::invalid_argument("SamplingRanges: bad scale range");
    if (!(angle_max >= angle_min)) throw std::invalid_argument("SamplingRanges: bad angle range");
  }
};

/// Where a reference-frame point lands in one member, plus that member's size.
struct MemberGeometry {
  Homography from_reference;  // reference pixels -> member pixels
  int width = 0;
  int height = 0;
};

inline std::vector<MemberGeometry> member_geometry(const geom::View& view, std::span<const GrayImage> images) {
  if (images.size() != view.members.size()) throw std::invalid_argument("member_geometry: image count mismatch");
  std::vector<MemberGeometry> out;
  for (std::size_t i = 0; i < images.size(); ++i)
    out.push_back({view.members[i].to_reference.inverse(), images[i].width(), images[i].height()});
  return out;
}

inline std::array<Eigen::Vector2d, 4> spec_corners(const PatchSpec& s) {
  const double c = std::cos(s.angle), sn = std::sin(s.angle), r = 0.5 * s.scale;
  std::array<Eigen::Vector2d, 4> out{};
  const double du[4] = {-r, r, r, -r};
  const double dv[4] = {-r, -r, r, r};
  for (int k = 0; k < 4; ++k) out[static_cast<std::size_t>(k)] = {s.x + c * du[k] - sn * dv[k], s.y + sn * du[k] + c * dv[k]};
  return out;
}

/// The rotated square maps inside every member raster. Homographies of
/// registered views keep the square convex, so its corners decide.
inline bool spec_fits(const PatchSpec& s, std::span<const MemberGeometry> members) {
  const auto corners = spec_corners(s);
  for (const auto& m : members) {
    for (const auto& c : corners) {
      const Eigen::Vector3d p = m.from_reference.matrix() * Eigen::Vector3d(c.x(), c.y(), 1.0);
      if (!(p.z() > 0.0)) return false;
      const double x = p.x() / p.z(), y = p.y() / p.z();
      if (x < 0.0 || y < 0.0 || x > m.width - 1 || y > m.height - 1) return false;
    }
  }
  return true;
}

/// Centers by inverse CDF over the flattened mask (pixel coordinates), scale
/// log-uniform, angle uniform. Specs that do not fit are redrawn; at most
/// 100 n draws in total.
inline std::vector<PatchSpec> sample_patch_specs(const ResponseMask& mask, int n, const SamplingRanges& ranges,
                                                 std::span<const MemberGeometry> members, std::uint64_t seed) {
  ranges.validate();
  if (n < 0) throw std::invalid_argument("sample_patch_specs: negative count");
  std::vector<double> cdf(mask.weights.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < cdf.size(); ++i) {
    acc += mask.weights[i];
    cdf[i] = acc;
  }
  if (!(acc > 0.0)) throw std::invalid_argument("sample_patch_specs: empty mask");
  auto rng = make_rng(seed);
  const double log_lo = std::log(ranges.scale_min), log_hi = std::log(ranges.scale_max);
  std::vector<PatchSpec> out;
  out.reserve(static_cast<std::size_t>(n));
  const long long budget = 100LL * n;
  for (long long draw = 0; static_cast<int>(out.size()) < n; ++draw) {
    if (draw >= budget) {
      throw std::runtime_error("sample_patch_specs: rejection budget exhausted after " + std::to_string(budget) +
                               " draws (" + std::to_string(out.size()) + " of " + std::to_string(n) + " accepted)");
    }
    const double u = uniform01(rng) * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    // Skip zero-weight cells that share a cumulative value with their successor.
    while (mask.weights[static_cast<std::size_t>(it - cdf.begin())] <= 0.0 && it + 1 != cdf.end()) ++it;
    const auto idx = static_cast<std::size_t>(it - cdf.begin());
    PatchSpec s;
    s.x = static_cast<double>(idx % static_cast<std::size_t>(mask.width));
    s.y = static_cast<double>(idx / static_cast<std::size_t>(mask.width));
    s.scale = std::exp(uniform(rng, log_lo, log_hi));
    s.angle = uniform(rng, ranges.angle_min, ranges.angle_max);
    if (spec_fits(s, members)) out.push_back(s);
  }
  return out;
}

struct PatchSet {
  std::uint64_t set_id = 0;
  std::string view_id;
  PatchSpec spec;
  std::vector<GrayImage> patches;  // one per view member, member order
};

/// Reference-frame position of output pixel (i, j) of an out_size patch.
inline Eigen::Vector2d patch_grid_point(const PatchSpec& s, int out_size, double i, double j) {
  const double step = s.scale / out_size;
  const double half = 0.5 * (out_size - 1);
  const double u = (i - half) * step, v = (j - half) * step;
  const double c = std::cos(s.angle), sn = std::sin(s.angle);
  return {s.x + c * u - sn * v, s.y + sn * u + c * v};
}

/// Samples the spec's grid in every member through its reference->member map.
inline PatchSet extract_patch_set(const geom::View& view, std::span<const GrayImage> images, const PatchSpec& spec,
                                  int out_size = 96, std::uint64_t set_id = 0) {
  if (images.size() != view.members.size()) throw std::invalid_argument("extract_patch_set: image count mismatch");
  if (out_size < 1) throw std::invalid_argument("extract_patch_set: bad output size");
  PatchSet ps{set_id, view.view_id, spec, {}};
  ps.patches.reserve(images.size());
  for (std::size_t m = 0; m < images.size(); ++m) {
    const bool identity = m == 0 || view.members[m].to_reference.matrix() == Eigen::Matrix3d::Identity();
    const Eigen::Matrix3d h = view.members[m].to_reference.inverse().matrix();
    GrayImage patch(out_size, out_size);
    for (int j = 0; j < out_size; ++j) {
      for (int i = 0; i < out_size; ++i) {
        Eigen::Vector2d p = patch_grid_point(spec, out_size, i, j);
        if (!identity) {
          const Eigen::Vector3d q = h * Eigen::Vector3d(p.x(), p.y(), 1.0);
          p = q.hnormalized();
        }
        if (!images[m].contains(p.x(), p.y())) {
          throw std::runtime_error("extract_patch_set: spec leaves member " + view.members[m].image_id);
        }
        patch(i, j) = bilinear(images[m], p.x(), p.y());
      }
    }
    ps.patches.push_back(std::move(patch));
  }
  return ps;
}

inline constexpr int kTrainPatchSide = 32;

struct AugmentParams {
  double rotation = 0.0;  // radians
  double scale = 1.0;
  double shear_x = 0.0;
  double shear_y = 0.0;
  double crop = 32.0;  // side of the square taken from the central 64x64
};

struct AugmentRanges {
  double rotation_max = 25.0 * std::numbers::pi / 180.0;
  double scale_min = 0.8;
  double scale_max = 1.4;
  double shear_max = 0.2;
  double crop_min = 32.0;
  double crop_max = 64.0;
};

inline AugmentParams draw_augment(Rng& rng, const AugmentRanges& r = {}) {
  AugmentParams p;
  p.rotation = uniform(rng, -r.rotation_max, r.rotation_max);
  p.scale = uniform(rng, r.scale_min, r.scale_max);
  p.shear_x = uniform(rng, -r.shear_max, r.shear_max);
  p.shear_y = uniform(rng, -r.shear_max, r.shear_max);
  p.crop = uniform(rng, r.crop_min, r.crop_max);
  return p;
}

/// Affine transform about the patch centre (rotation * scale * shear), then
/// the centred crop of side p.crop resampled to 32x32. Reads outside the
/// source take the nearest edge value.
inline GrayImage apply_augment(const GrayImage& patch, const AugmentParams& p) {
  if (patch.width() < 64 || patch.height() < 64) throw std::invalid_argument("apply_augment: patch smaller than 64x64");
  Eigen::Matrix2d rot, shear;
  rot << std::cos(p.rotation), -std::sin(p.rotation), std::sin(p.rotation), std::cos(p.rotation);
  shear << 1.0, p.shear_x, p.shear_y, 1.0;
  const Eigen::Matrix2d a = rot * (p.scale * shear);
  const Eigen::Matrix2d a_inv = a.inverse();
  const double cx = 0.5 * (patch.width() - 1), cy = 0.5 * (patch.height() - 1);
  const double half = 0.5 * (kTrainPatchSide - 1);
  const double step = p.crop / kTrainPatchSide;
  GrayImage out(kTrainPatchSide, kTrainPatchSide);
  for (int j = 0; j < kTrainPatchSide; ++j) {
    for (int i = 0; i < kTrainPatchSide; ++i) {
      const Eigen::Vector2d d((i - half) * step, (j - half) * step);
      const Eigen::Vector2d s = a_inv * d;
      out(i, j) = bilinear_clamped(patch, cx + s.x(), cy + s.y());
    }
  }
  return out;
}

inline GrayImage augment_patch(const GrayImage& patch, std::uint64_t seed, const AugmentRanges& r = {}) {
  auto rng = make_rng(seed);
  return apply_augment(patch, draw_augment(rng, r));
}

}  // namespace amos::sampler
