#pragma once

#include "amos/common/rng.hpp"
#include "amos/sampler/patches.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace amos::sampler {

struct TrainBatch {
  std::vector<GrayImage> anchors;    // 32x32
  std::vector<GrayImage> positives;  // 32x32, same patch set as the anchor
  std::vector<std::string> view_ids;
  std::vector<std::uint64_t> set_ids;

  [[nodiscard]] std::size_t size() const noexcept { return anchors.size(); }
};

/// Draws views_per_batch views, then whole patch sets without replacement
/// (so off-diagonal pairs are true negatives), then two distinct members per
/// set, each augmented. Quotas split batch_size as evenly as possible.
inline TrainBatch assemble_batch(std::span<const PatchSet> sets, int batch_size, int views_per_batch, std::uint64_t seed,
                                 const AugmentRanges& aug = {}) {
  if (batch_size < 1 || views_per_batch < 1) throw std::invalid_argument("assemble_batch: sizes must be positive");
  std::map<std::string, std::vector<std::size_t>> by_view;
  for (std::size_t i = 0; i < sets.size(); ++i) by_view[sets[i].view_id].push_back(i);
  if (static_cast<int>(by_view.size()) < views_per_batch) {
    throw std::runtime_error("assemble_batch: " + std::to_string(by_view.size()) + " views available, " +
                             std::to_string(views_per_batch) + " requested");
  }
  std::vector<std::string> view_ids;
  for (const auto& [id, _] : by_view) view_ids.push_back(id);

  auto rng = make_rng(seed);
  std::vector<std::string> chosen;
  std::sample(view_ids.begin(), view_ids.end(), std::back_inserter(chosen), views_per_batch, rng);
  const int need = (batch_size + views_per_batch - 1) / views_per_batch;
  for (const auto& v : chosen) {
    if (static_cast<int>(by_view[v].size()) < need) {
      throw std::runtime_error("assemble_batch: view " + v + " has " + std::to_string(by_view[v].size()) +
                               " patch sets, needs " + std::to_string(need));
    }
  }

  TrainBatch b;
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    const int quota = batch_size / views_per_batch + (static_cast<int>(k) < batch_size % views_per_batch ? 1 : 0);
    std::vector<std::size_t> picked;
    const auto& pool = by_view[chosen[k]];
    std::sample(pool.begin(), pool.end(), std::back_inserter(picked), quota, rng);
    for (std::size_t idx : picked) {
      const PatchSet& ps = sets[idx];
      if (ps.patches.size() < 2) throw std::runtime_error("assemble_batch: patch set with fewer than two members");
      std::uniform_int_distribution<std::size_t> member(0, ps.patches.size() - 1);
      const std::size_t m1 = member(rng);
      std::size_t m2 = member(rng);
      while (m2 == m1) m2 = member(rng);
      GrayImage a = apply_augment(ps.patches[m1], draw_augment(rng, aug));
      GrayImage p = apply_augment(ps.patches[m2], draw_augment(rng, aug));
      if (uniform01(rng) < 0.5) std::swap(a, p);
      b.anchors.push_back(std::move(a));
      b.positives.push_back(std::move(p));
      b.view_ids.push_back(ps.view_id);
      b.set_ids.push_back(ps.set_id);
    }
  }
  return b;
}

using DescMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TripletLoss {
  double loss = 0.0;
  std::vector<int> hardest_negative;    // column (or row) index of the hardest non-matching descriptor
  std::vector<double> positive_distance;
  std::vector<double> negative_distance;
};

/// D_ij = sqrt(max(0, 2 - 2 a_i . p_j)). The negative for row i is the closest
/// off-diagonal entry of row i or column i; ties go to the smaller index, row
/// before column.
inline TripletLoss hard_in_batch_triplet_loss(const DescMatrix& anchors, const DescMatrix& positives, double margin = 1.0) {
  const auto n = anchors.rows();
  if (n < 2) throw std::invalid_argument("hard_in_batch_triplet_loss: need at least two pairs");
  if (positives.rows() != n || positives.cols() != anchors.cols()) {
    throw std::invalid_argument("hard_in_batch_triplet_loss: shape mismatch");
  }
  if (!anchors.allFinite() || !positives.allFinite()) throw std::invalid_argument("hard_in_batch_triplet_loss: non-finite descriptor");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(anchors.row(i).norm() - 1.0) > 1e-4 || std::abs(positives.row(i).norm() - 1.0) > 1e-4) {
      throw std::invalid_argument("hard_in_batch_triplet_loss: rows must be unit norm");
    }
  }
  const DescMatrix dot = anchors * positives.transpose();
  const DescMatrix d = (2.0 - 2.0 * dot.array()).cwiseMax(0.0).sqrt().matrix();

  TripletLoss out;
  out.hardest_negative.resize(static_cast<std::size_t>(n));
  out.positive_distance.resize(static_cast<std::size_t>(n));
  out.negative_distance.resize(static_cast<std::size_t>(n));
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i && d(i, j) < best) {
        best = d(i, j);
        arg = j;
      }
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i && (d(j, i) < best || (d(j, i) == best && j < arg))) {
        best = d(j, i);
        arg = j;
      }
    }
    const double pos = d(i, i);
    out.hardest_negative[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    out.positive_distance[static_cast<std::size_t>(i)] = pos;
    out.negative_distance[static_cast<std::size_t>(i)] = best;
    total += std::max(0.0, margin + pos - best);
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

}  // namespace amos::sampler
