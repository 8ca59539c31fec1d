#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/LU>

#include <array>
#include <cmath>
#include <stdexcept>

namespace amos {

/// 3x3 projective map, normalized so that h(2,2) == 1.
class Homography {
 public:
  Homography() : m_(Eigen::Matrix3d::Identity()) {}

  /// Normalizes by the (3,3) element; throws if that is not possible or the
  /// normalized matrix is singular.
  explicit Homography(const Eigen::Matrix3d& m) {
    if (!m.allFinite()) throw std::invalid_argument("Homography: non-finite entry");
    if (std::abs(m(2, 2)) < 1e-12) throw std::invalid_argument("Homography: h33 ~ 0, cannot normalize");
    m_ = m / m(2, 2);
    m_(2, 2) = 1.0;
    if (std::abs(m_.determinant()) <= 1e-12) throw std::invalid_argument("Homography: singular matrix");
  }

  static Homography identity() { return {}; }

  static Homography translation(double tx, double ty) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 2) = tx;
    m(1, 2) = ty;
    return Homography(m);
  }

  static Homography from_row_major(const std::array<double, 9>& h) {
    Eigen::Matrix3d m;
    m << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
    return Homography(m);
  }

  [[nodiscard]] std::array<double, 9> row_major() const {
    return {m_(0, 0), m_(0, 1), m_(0, 2), m_(1, 0), m_(1, 1), m_(1, 2), m_(2, 0), m_(2, 1), m_(2, 2)};
  }

  [[nodiscard]] const Eigen::Matrix3d& matrix() const noexcept { return m_; }
  [[nodiscard]] double operator()(int r, int c) const noexcept { return m_(r, c); }

  [[nodiscard]] Homography inverse() const { return Homography(m_.inverse()); }

  /// (a * b) applies b first.
  friend Homography operator*(const Homography& a, const Homography& b) { return Homography(a.m_ * b.m_); }

  [[nodiscard]] Eigen::Vector2d apply(const Eigen::Vector2d& p) const {
    const Eigen::Vector3d q = m_ * p.homogeneous();
    return q.hnormalized();
  }

  [[nodiscard]] Eigen::Vector2d apply(double x, double y) const { return apply(Eigen::Vector2d(x, y)); }

 private:
  Eigen::Matrix3d m_;
};

/// Sum of absolute differences between the normalized matrix and I3.
inline double sad_to_identity(const Homography& h) {
  return (h.matrix() - Eigen::Matrix3d::Identity()).cwiseAbs().sum();
}

/// Largest displacement of the four image corners between two homographies.
inline double max_corner_distance(const Homography& a, const Homography& b, int width, int height) {
  const std::array<Eigen::Vector2d, 4> corners{Eigen::Vector2d(0, 0), Eigen::Vector2d(width - 1, 0),
                                               Eigen::Vector2d(0, height - 1),
                                               Eigen::Vector2d(width - 1, height - 1)};
  double worst = 0.0;
  for (const auto& c : corners) worst = std::max(worst, (a.apply(c) - b.apply(c)).norm());
  return worst;
}

}  // namespace amos
