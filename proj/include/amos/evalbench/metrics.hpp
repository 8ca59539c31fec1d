#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <tuple>
#include <utility>
#include <vector>

namespace amos::eval {

/// Row-major float descriptors, one unit-norm row per patch.
using DescriptorRows = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct RankedPair {
  int a = 0;
  int b = 0;
  double distance = 0.0;
  bool correct = false;
};

/// Pairwise distances via sqrt(max(0, 2 - 2 a.b)) of unit rows.
inline Eigen::MatrixXd pairwise_distances(const DescriptorRows& a, const DescriptorRows& b) {
  const Eigen::MatrixXf dot = a * b.transpose();
  return (2.0 - 2.0 * dot.cast<double>().array()).cwiseMax(0.0).sqrt().matrix();
}

/// Greedy global bijection: all N^2 pairs by ascending distance (ties by
/// (a, b)), each accepted when both ends are unused. Returned in acceptance
/// order, which is also rank order.
inline std::vector<RankedPair> greedy_bijection(const Eigen::MatrixXd& d, const std::vector<int>& gt) {
  const auto n = static_cast<int>(d.rows());
  std::vector<std::tuple<double, int, int>> all;
  all.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) all.emplace_back(d(i, j), i, j);
  std::sort(all.begin(), all.end());
  std::vector<char> used_a(static_cast<std::size_t>(n), 0), used_b(static_cast<std::size_t>(n), 0);
  std::vector<RankedPair> out;
  out.reserve(static_cast<std::size_t>(n));
  for (const auto& [dist, i, j] : all) {
    if (used_a[static_cast<std::size_t>(i)] || used_b[static_cast<std::size_t>(j)]) continue;
    used_a[static_cast<std::size_t>(i)] = used_b[static_cast<std::size_t>(j)] = 1;
    out.push_back({i, j, dist, gt[static_cast<std::size_t>(i)] == j});
    if (static_cast<int>(out.size()) == n) break;
  }
  return out;
}

/// Sum over correct ranks k of precision@k times 1/N.
inline double ranked_list_ap(const std::vector<RankedPair>& ranked, std::size_t n_relevant) {
  double ap = 0.0;
  int hits = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (!ranked[k].correct) continue;
    ++hits;
    ap += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return ap / static_cast<double>(n_relevant);
}

inline void check_bijection(const std::vector<int>& gt, std::size_t n) {
  if (gt.size() != n) throw std::invalid_argument("match_task_ap: ground truth size mismatch");
  std::vector<char> seen(n, 0);
  for (int j : gt) {
    if (j < 0 || static_cast<std::size_t>(j) >= n || seen[static_cast<std::size_t>(j)]) {
      throw std::invalid_argument("match_task_ap: ground truth is not a bijection");
    }
    seen[static_cast<std::size_t>(j)] = 1;
  }
}

/// Matching-task AP between two equally sized patch sets; gt[i] is the index
/// in B of A's i-th patch.
inline double match_task_ap(const DescriptorRows& a, const DescriptorRows& b, const std::vector<int>& gt) {
  if (a.rows() != b.rows()) throw std::invalid_argument("match_task_ap: set sizes differ");
  if (a.rows() < 2) throw std::invalid_argument("match_task_ap: need at least two patches per side");
  if (a.cols() != b.cols()) throw std::invalid_argument("match_task_ap: descriptor dimension mismatch");
  check_bijection(gt, static_cast<std::size_t>(a.rows()));
  return ranked_list_ap(greedy_bijection(pairwise_distances(a, b), gt), gt.size());
}

inline std::vector<int> identity_bijection(std::size_t n) {
  std::vector<int> gt(n);
  std::iota(gt.begin(), gt.end(), 0);
  return gt;
}

struct PrCurve {
  std::vector<std::pair<double, double>> points;  // (recall, precision) after each prefix
  double ap = 0.0;
};

/// Pairs sorted by score descending (stable, so ties keep input order). AP is
/// the step sum of precision at each positive over the number of positives.
inline PrCurve verification_pr(const std::vector<std::pair<double, bool>>& scored) {
  std::size_t positives = 0;
  for (const auto& s : scored) positives += s.second;
  if (positives == 0 || positives == scored.size()) throw std::invalid_argument("verification_pr: need both classes");
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return scored[x].first > scored[y].first; });
  PrCurve c;
  c.points.reserve(order.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const bool pos = scored[order[k]].second;
    tp += pos;
    const double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
    if (pos) c.ap += precision;
    c.points.emplace_back(static_cast<double>(tp) / static_cast<double>(positives), precision);
  }
  c.ap /= static_cast<double>(positives);
  return c;
}

}  // namespace amos::eval
