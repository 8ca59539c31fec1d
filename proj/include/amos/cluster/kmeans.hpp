#pragma once

#include "amos/cluster/embeddings.hpp"
#include "amos/common/rng.hpp"

#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace amos::cluster {

struct Clustering {
  int k = 0;
  std::vector<int> assignment;  // row index -> cluster index
  RowMatrix centroids;          // k x D
  double cost = 0.0;            // sum of squared distances to assigned centroid
  std::vector<double> cost_history;
  int iterations = 0;

  [[nodiscard]] std::vector<int> cluster_sizes() const {
    std::vector<int> sizes(static_cast<std::size_t>(k), 0);
    for (int a : assignment) ++sizes[static_cast<std::size_t>(a)];
    return sizes;
  }
};

namespace detail {

inline double squared_distance(const RowMatrix& x, Eigen::Index i, const RowMatrix& c, Eigen::Index j) {
  return (x.row(i) - c.row(j)).squaredNorm();
}

inline double assignment_cost(const RowMatrix& x, const std::vector<int>& assign, const RowMatrix& c) {
  double cost = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) cost += squared_distance(x, i, c, assign[static_cast<std::size_t>(i)]);
  return cost;
}

// Nearest centroid, ties to the lower index. Returns true if any label changed.
inline bool assign_nearest(const RowMatrix& x, const RowMatrix& c, std::vector<int>& assign) {
  bool changed = false;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < c.rows(); ++j) {
      const double d = squared_distance(x, i, c, j);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(j);
      }
    }
    if (assign[static_cast<std::size_t>(i)] != best) {
      assign[static_cast<std::size_t>(i)] = best;
      changed = true;
    }
  }
  return changed;
}

// An empty cluster takes the point farthest from its own centroid, drawn from
// clusters that would not become empty themselves.
inline void repair_empty(const RowMatrix& x, RowMatrix& c, std::vector<int>& assign) {
  const auto k = c.rows();
  std::vector<int> sizes(static_cast<std::size_t>(k), 0);
  for (int a : assign) ++sizes[static_cast<std::size_t>(a)];
  for (Eigen::Index j = 0; j < k; ++j) {
    if (sizes[static_cast<std::size_t>(j)] > 0) continue;
    Eigen::Index far = -1;
    double far_d = -1.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const int a = assign[static_cast<std::size_t>(i)];
      if (sizes[static_cast<std::size_t>(a)] < 2) continue;
      const double d = squared_distance(x, i, c, a);
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    if (far < 0) throw std::logic_error("kmeans: cannot repair empty cluster");
    --sizes[static_cast<std::size_t>(assign[static_cast<std::size_t>(far)])];
    assign[static_cast<std::size_t>(far)] = static_cast<int>(j);
    sizes[static_cast<std::size_t>(j)] = 1;
    c.row(j) = x.row(far);
  }
}

inline RowMatrix update_centroids(const RowMatrix& x, const std::vector<int>& assign, Eigen::Index k) {
  RowMatrix c = RowMatrix::Zero(k, x.cols());
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int a = assign[static_cast<std::size_t>(i)];
    c.row(a) += x.row(i);
    ++counts[static_cast<std::size_t>(a)];
  }
  for (Eigen::Index j = 0; j < k; ++j)
    if (counts[static_cast<std::size_t>(j)] > 0) c.row(j) /= counts[static_cast<std::size_t>(j)];
  return c;
}

inline RowMatrix kmeanspp_seed(const RowMatrix& x, Eigen::Index k, Rng& rng) {
  const auto n = x.rows();
  RowMatrix c(k, x.cols());
  std::vector<char> chosen(static_cast<std::size_t>(n), 0);
  auto first = static_cast<Eigen::Index>(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));
  c.row(0) = x.row(first);
  chosen[static_cast<std::size_t>(first)] = 1;
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = squared_distance(x, i, c, 0);
  for (Eigen::Index j = 1; j < k; ++j) {
    double total = 0.0;
    for (double v : d2) total += v;
    Eigen::Index pick = -1;
    if (total > 0.0) {
      const double u = uniform01(rng) * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (d2[static_cast<std::size_t>(i)] > 0.0 && u < acc) {
          pick = i;
          break;
        }
      }
      if (pick < 0) {
        for (Eigen::Index i = n - 1; i >= 0; --i)
          if (d2[static_cast<std::size_t>(i)] > 0.0) { pick = i; break; }
      }
    } else {
      // Only duplicates remain; take an unchosen row uniformly.
      std::vector<Eigen::Index> pool;
      for (Eigen::Index i = 0; i < n; ++i)
        if (!chosen[static_cast<std::size_t>(i)]) pool.push_back(i);
      pick = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    }
    chosen[static_cast<std::size_t>(pick)] = 1;
    c.row(j) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], squared_distance(x, i, c, j));
  }
  return c;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding. Stops when the relative cost
/// improvement drops below tol, assignments stop changing, or after max_iters.
/// cost_history[t] is the cost after iteration t (index 0: after seeding).
inline Clustering kmeans(const EmbeddingSet& emb, int k, std::uint64_t seed, int max_iters = 100, double tol = 1e-4) {
  emb.validate();
  const auto n = static_cast<Eigen::Index>(emb.size());
  if (k < 1) throw std::invalid_argument("kmeans: K must be >= 1");
  if (n < k) throw std::invalid_argument("kmeans: N (" + std::to_string(n) + ") < K (" + std::to_string(k) + ")");
  const RowMatrix& x = emb.vectors;
  auto rng = make_rng(seed);

  Clustering out;
  out.k = k;
  out.centroids = detail::kmeanspp_seed(x, k, rng);
  out.assignment.assign(static_cast<std::size_t>(n), -1);
  detail::assign_nearest(x, out.centroids, out.assignment);
  detail::repair_empty(x, out.centroids, out.assignment);
  out.cost = detail::assignment_cost(x, out.assignment, out.centroids);
  out.cost_history.push_back(out.cost);

  for (int it = 0; it < max_iters && out.cost > 0.0; ++it) {
    RowMatrix c = detail::update_centroids(x, out.assignment, k);
    std::vector<int> assign = out.assignment;
    const bool changed = detail::assign_nearest(x, c, assign);
    detail::repair_empty(x, c, assign);
    const double cost = detail::assignment_cost(x, assign, c);
    const double prev = out.cost;
    out.centroids = std::move(c);
    out.assignment = std::move(assign);
    out.cost = cost;
    out.cost_history.push_back(cost);
    out.iterations = it + 1;
    if (!changed || (prev - cost) / prev < tol) break;
  }
  return out;
}

/// Per nonempty cluster, the id closest to the centroid (ties: smallest id),
/// in cluster-index order.
inline std::vector<std::string> select_representatives(const EmbeddingSet& emb, const Clustering& c) {
  std::vector<std::string> out;
  for (int j = 0; j < c.k; ++j) {
    const std::string* best_id = nullptr;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < emb.size(); ++i) {
      if (c.assignment[i] != j) continue;
      const double d = detail::squared_distance(emb.vectors, static_cast<Eigen::Index>(i), c.centroids, j);
      if (d < best_d || (d == best_d && emb.image_ids[i] < *best_id)) {
        best_d = d;
        best_id = &emb.image_ids[i];
      }
    }
    if (best_id) out.push_back(*best_id);
  }
  return out;
}

}  // namespace amos::cluster
