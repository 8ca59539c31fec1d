#pragma once

#include "amos/common/parallel.hpp"
#include "amos/geom/views.hpp"
#include "amos/imgcore/filters.hpp"
#include "amos/imgcore/homography.hpp"
#include "amos/imgcore/image.hpp"
#include "amos/imgcore/warp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace amos::geom {

struct RefineOptions {
  int pyramid_levels = 3;
  int max_iters = 50;          // per level
  double ncc_min = 0.8;        // success floor on the finest level
  double step_tol_px = 0.01;   // convergence: largest corner shift of one update
  double min_overlap = 0.25;   // fraction of template pixels that must stay valid
};

struct LevelTrace {
  int level = 0;
  int iterations = 0;
  bool converged = false;
  double initial_mse = 0.0;
  double final_mse = 0.0;
};

struct RefineResult {
  bool success = false;
  Homography h;  // moving -> reference
  double ncc = 0.0;
  std::string failure_reason;
  std::vector<LevelTrace> levels;  // coarse to fine
};

/// Inverse-compositional Gauss-Newton alignment of a moving image onto a
/// fixed reference over the 8 homography parameters, coarse to fine.
/// The moving image is mapped onto the reference's gain and offset (moment
/// matching over the overlap) before each residual evaluation, so the cost
/// is the SSD after global photometric normalization.
class RegistrationTemplate {
 public:
  explicit RegistrationTemplate(const GrayImage& reference, int levels = 3) {
    GrayImage img = reference;
    for (int l = 0; l < std::max(levels, 1); ++l) {
      if (l > 0) {
        if (img.width() < 32 || img.height() < 32) break;
        img = downsample2(img);
      }
      levels_.push_back(make_level(img, l));
    }
  }

  [[nodiscard]] int levels() const noexcept { return static_cast<int>(levels_.size()); }
  [[nodiscard]] int width() const noexcept { return levels_.front().image.width(); }
  [[nodiscard]] int height() const noexcept { return levels_.front().image.height(); }

  [[nodiscard]] RefineResult refine(const GrayImage& moving, const Homography& h_init, const RefineOptions& opt) const {
    RefineResult res;
    std::vector<GrayImage> pyr{moving};
    for (int l = 1; l < levels(); ++l) pyr.push_back(downsample2(pyr.back()));

    // Warp in level-0 pixels, reference -> moving.
    Eigen::Matrix3d w0 = h_init.inverse().matrix();
    bool finest_converged = false;
    for (int l = levels() - 1; l >= 0; --l) {
      const Level& lv = levels_[static_cast<std::size_t>(l)];
      const GrayImage& mov = pyr[static_cast<std::size_t>(l)];
      const Eigen::Matrix3d s = level_map(l);
      const Eigen::Matrix3d nm = normalizer(mov.width(), mov.height());
      Eigen::Matrix3d p = nm * s * w0 * s.inverse() * lv.denormalize;
      p /= p(2, 2);

      LevelTrace trace;
      trace.level = l;
      Eval ev = evaluate(lv, mov, p, false);
      if (!ev.ok) return fail(res, ev.reason);
      trace.initial_mse = ev.mse;
      Eigen::Matrix3d best_p = p;
      double best_mse = ev.mse;
      for (int it = 0; it < opt.max_iters; ++it) {
        if (ev.valid_fraction < opt.min_overlap) return fail(res, "insufficient overlap");
        const Eigen::Matrix<double, 8, 1> dp = ev.hessian.ldlt().solve(ev.gradient);
        if (!dp.allFinite()) return fail(res, "divergence: non-finite update");
        Eigen::Matrix3d d;
        d << 1 + dp(0), dp(2), dp(4), dp(1), 1 + dp(3), dp(5), dp(6), dp(7), 1;
        if (std::abs(d.determinant()) < 1e-12) return fail(res, "divergence: degenerate update");
        p = p * d.inverse();
        if (!p.allFinite() || std::abs(p(2, 2)) < 1e-12) return fail(res, "divergence: degenerate warp");
        p /= p(2, 2);
        trace.iterations = it + 1;
        ev = evaluate(lv, mov, p, false);
        if (!ev.ok) return fail(res, ev.reason);
        if (ev.mse < best_mse) {
          best_mse = ev.mse;
          best_p = p;
        }
        if (step_pixels(lv, d) < opt.step_tol_px) {
          trace.converged = true;
          break;
        }
      }
      trace.final_mse = best_mse;
      res.levels.push_back(trace);
      if (l == 0) finest_converged = trace.converged;
      w0 = s.inverse() * nm.inverse() * best_p * lv.normalize * s;
      w0 /= w0(2, 2);
    }

    const Level& fine = levels_.front();
    const Eigen::Matrix3d p0 = normalizer(moving.width(), moving.height()) * w0 * fine.denormalize;
    const Eval final_ev = evaluate(fine, moving, p0 / p0(2, 2), true);
    if (!final_ev.ok) return fail(res, final_ev.reason);
    res.ncc = final_ev.ncc;
    try {
      res.h = Homography(w0).inverse();
    } catch (const std::invalid_argument&) {
      return fail(res, "divergence: singular result");
    }
    if (!finest_converged) return fail(res, "not converged");
    if (res.ncc < opt.ncc_min) return fail(res, "ncc below floor");
    res.success = true;
    return res;
  }

 private:
  using Vec8 = Eigen::Matrix<double, 8, 1>;
  using Mat8 = Eigen::Matrix<double, 8, 8>;

  struct Level {
    GrayImage image;
    std::vector<std::array<float, 8>> sd;  // steepest-descent rows, interior pixels in raster order
    Mat8 hessian_full = Mat8::Zero();
    Eigen::Matrix3d normalize;    // pixel -> normalized
    Eigen::Matrix3d denormalize;  // normalized -> pixel
  };

  struct Eval {
    bool ok = true;
    std::string reason;
    double mse = 0.0;
    double ncc = 0.0;
    double valid_fraction = 0.0;
    Vec8 gradient = Vec8::Zero();
    Mat8 hessian = Mat8::Zero();
  };

  static Eigen::Matrix3d normalizer(int w, int h) {
    const double sc = 0.5 * std::max(w, h);
    Eigen::Matrix3d n;
    n << 1.0 / sc, 0, -0.5 * (w - 1) / sc, 0, 1.0 / sc, -0.5 * (h - 1) / sc, 0, 0, 1;
    return n;
  }

  // Level-0 pixel coordinates -> level-l pixel coordinates under 2x2 averaging.
  static Eigen::Matrix3d level_map(int l) {
    const double s = std::ldexp(1.0, -l);
    const double c = 0.5 * (s - 1.0);
    Eigen::Matrix3d m;
    m << s, 0, c, 0, s, c, 0, 0, 1;
    return m;
  }

  static Level make_level(const GrayImage& img, int) {
    Level lv;
    lv.image = img;
    const int w = img.width();
    const int h = img.height();
    lv.normalize = normalizer(w, h);
    lv.denormalize = lv.normalize.inverse();
    const double sc = 0.5 * std::max(w, h);
    lv.sd.reserve(static_cast<std::size_t>(w - 2) * static_cast<std::size_t>(h - 2));
    for (int y = 1; y < h - 1; ++y) {
      for (int x = 1; x < w - 1; ++x) {
        const double u = (x - 0.5 * (w - 1)) / sc;
        const double v = (y - 0.5 * (h - 1)) / sc;
        // Gradient with respect to normalized coordinates.
        const double tx = 0.5 * (img(x + 1, y) - img(x - 1, y)) * sc;
        const double ty = 0.5 * (img(x, y + 1) - img(x, y - 1)) * sc;
        const std::array<double, 8> row{tx * u, ty * u, tx * v, ty * v, tx, ty, -tx * u * u - ty * u * v,
                                        -tx * u * v - ty * v * v};
        std::array<float, 8> rf{};
        for (int k = 0; k < 8; ++k) rf[static_cast<std::size_t>(k)] = static_cast<float>(row[static_cast<std::size_t>(k)]);
        const Vec8 r = Eigen::Map<const Vec8>(row.data());
        lv.hessian_full.noalias() += r * r.transpose();
        lv.sd.push_back(rf);
      }
    }
    return lv;
  }

  static double step_pixels(const Level& lv, const Eigen::Matrix3d& d) {
    const int w = lv.image.width();
    const int h = lv.image.height();
    const double sc = 0.5 * std::max(w, h);
    double worst = 0.0;
    for (const auto& c : {Eigen::Vector2d(-0.5 * (w - 1), -0.5 * (h - 1)), Eigen::Vector2d(0.5 * (w - 1), -0.5 * (h - 1)),
                          Eigen::Vector2d(-0.5 * (w - 1), 0.5 * (h - 1)), Eigen::Vector2d(0.5 * (w - 1), 0.5 * (h - 1))}) {
      const Eigen::Vector2d n = c / sc;
      const Eigen::Vector2d m = (d * n.homogeneous()).hnormalized();
      worst = std::max(worst, (m - n).norm() * sc);
    }
    return worst;
  }

  // Samples the moving image through p, then forms residual statistics.
  static Eval evaluate(const Level& lv, const GrayImage& mov, const Eigen::Matrix3d& p, bool with_ncc) {
    Eval ev;
    const GrayImage& t = lv.image;
    const int w = t.width();
    const int h = t.height();
    const Eigen::Matrix3d to_mov = normalizer(mov.width(), mov.height()).inverse() * p * lv.normalize;
    const std::size_t n = lv.sd.size();
    std::vector<float> iw(n, 0.0F);
    std::vector<unsigned char> valid(n, 0);
    double si = 0, sii = 0, st = 0, stt = 0;
    std::size_t nv = 0;
    std::size_t k = 0;
    for (int y = 1; y < h - 1; ++y) {
      for (int x = 1; x < w - 1; ++x, ++k) {
        const double zw = to_mov(2, 0) * x + to_mov(2, 1) * y + to_mov(2, 2);
        if (!(std::abs(zw) > 1e-12)) continue;
        const double mx = (to_mov(0, 0) * x + to_mov(0, 1) * y + to_mov(0, 2)) / zw;
        const double my = (to_mov(1, 0) * x + to_mov(1, 1) * y + to_mov(1, 2)) / zw;
        if (!mov.contains(mx, my)) continue;
        const float v = bilinear(mov, mx, my);
        iw[k] = v;
        valid[k] = 1;
        const double tv = t(x, y);
        si += v;
        sii += static_cast<double>(v) * v;
        st += tv;
        stt += tv * tv;
        ++nv;
      }
    }
    ev.valid_fraction = static_cast<double>(nv) / static_cast<double>(n);
    if (nv < 16) {
      ev.ok = false;
      ev.reason = "insufficient overlap";
      return ev;
    }
    const double dn = static_cast<double>(nv);
    const double mi = si / dn;
    const double mt = st / dn;
    const double vi = std::max(sii / dn - mi * mi, 0.0);
    const double vt = std::max(stt / dn - mt * mt, 0.0);
    if (vi < 1e-8 || vt < 1e-8) {
      ev.ok = false;
      ev.reason = "no contrast in overlap";
      return ev;
    }
    const double gain = std::sqrt(vt / vi);
    ev.hessian = lv.hessian_full;
    double sse = 0.0;
    double cross = 0.0;
    k = 0;
    for (int y = 1; y < h - 1; ++y) {
      for (int x = 1; x < w - 1; ++x, ++k) {
        const auto& row = lv.sd[k];
        if (!valid[k]) {
          const Vec8 r = Eigen::Map<const Eigen::Matrix<float, 8, 1>>(row.data()).cast<double>();
          ev.hessian.noalias() -= r * r.transpose();
          continue;
        }
        const double tv = t(x, y);
        const double e = gain * (iw[k] - mi) + mt - tv;
        sse += e * e;
        for (int j = 0; j < 8; ++j) ev.gradient(j) += static_cast<double>(row[static_cast<std::size_t>(j)]) * e;
        if (with_ncc) cross += (iw[k] - mi) * (tv - mt);
      }
    }
    ev.mse = sse / dn;
    if (with_ncc) ev.ncc = cross / (dn * std::sqrt(vi * vt));
    return ev;
  }

  static RefineResult& fail(RefineResult& r, std::string reason) {
    r.success = false;
    r.failure_reason = std::move(reason);
    return r;
  }

  std::vector<Level> levels_;
};

/// Refines h_init (moving -> reference). Success requires convergence on the
/// finest level and NCC >= opt.ncc_min over the overlap.
inline RefineResult refine_registration(const GrayImage& reference, const GrayImage& moving, const Homography& h_init,
                                        const RefineOptions& opt = {}) {
  return RegistrationTemplate(reference, opt.pyramid_levels).refine(moving, h_init, opt);
}

struct VerifyOutcome {
  bool kept = false;
  View view;
  std::string reason;
  std::vector<RefineResult> members;  // aligned with view.members; [0] is the reference
};

/// Refines every non-reference member against the reference. A single
/// failure removes the whole view.
inline VerifyOutcome verify_view_registration(const View& view, std::span<const GrayImage> images,
                                              const RefineOptions& opt = {}, int jobs = 1) {
  if (images.size() != view.members.size()) throw std::invalid_argument("verify_view_registration: image count mismatch");
  VerifyOutcome out;
  out.view = view;
  out.members.resize(view.members.size());
  out.members[0].success = true;
  out.members[0].ncc = 1.0;
  const RegistrationTemplate tmpl(images[0], opt.pyramid_levels);
  parallel_for(view.members.size() - 1, jobs, [&](std::size_t k) {
    out.members[k + 1] = tmpl.refine(images[k + 1], view.members[k + 1].to_reference, opt);
  });
  for (std::size_t i = 1; i < out.members.size(); ++i) {
    if (!out.members[i].success) {
      out.kept = false;
      out.reason = "registration failed for " + view.members[i].image_id + ": " + out.members[i].failure_reason;
      out.view.status = ViewStatus::rejected;
      out.view.failure_reason = out.reason;
      return out;
    }
  }
  for (std::size_t i = 1; i < out.members.size(); ++i) out.view.members[i].to_reference = out.members[i].h;
  out.view.status = ViewStatus::registered;
  out.kept = true;
  return out;
}

}  // namespace amos::geom
