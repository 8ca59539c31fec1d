#pragma once

#include "amos/common/parallel.hpp"
#include "amos/common/rng.hpp"
#include "amos/evalbench/runner.hpp"
#include "amos/sampler/batch.hpp"

#include <algorithm>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace amos::eval {

/// One row per views-per-batch setting, averaged over independent batches.
struct BatchCompositionRow {
  std::string label;  // as requested: a number or "all"
  int views_per_batch = 0;
  double mean_loss = 0.0;
  double mean_positive = 0.0;
  double mean_hardest_negative = 0.0;
  double same_view_negative_share = 0.0;  // hardest negatives drawn from the anchor's own view
};

struct BatchCompositionReport {
  int batch_size = 0;
  int batches = 0;
  std::uint64_t seed = 0;
  std::vector<BatchCompositionRow> rows;  // ascending views_per_batch

  /// Fewer views per batch means more same-scene negatives, so the hardest
  /// negative must not get further away as views are removed. The loss also
  /// carries the positive distance, which composition does not touch, so it
  /// is recorded but not part of the check.
  [[nodiscard]] bool monotone() const {
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i].mean_hardest_negative < rows[i - 1].mean_hardest_negative) return false;
    return true;
  }
};

/// Parses "1,6,all"; 0 stands for every view.
inline std::vector<int> parse_views_per_batch(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item == "all") {
      out.push_back(0);
      continue;
    }
    std::size_t used = 0;
    const int v = std::stoi(item, &used);
    if (used != item.size() || v < 1) throw std::invalid_argument("views per batch: bad entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("views per batch: empty list");
  return out;
}

/// Assembles `batches` batches per setting (assemble_batch with seeds derived
/// from (seed, setting, batch index)), describes anchors and positives with
/// `fn` and evaluates the hard-in-batch triplet loss.
inline BatchCompositionReport batch_composition_experiment(std::span<const sampler::PatchSet> sets, const std::vector<int>& settings,
                                                           int batch_size, int batches, const DescriptorFn& fn,
                                                           std::uint64_t seed, int jobs = 1, double margin = 1.0) {
  if (batches < 1) throw std::invalid_argument("batch_composition_experiment: need at least one batch");
  std::set<std::string> views;
  for (const auto& s : sets) views.insert(s.view_id);
  const int n_views = static_cast<int>(views.size());

  BatchCompositionReport rep{batch_size, batches, seed, {}};
  for (int setting : settings) {
    const int vpb = setting == 0 ? n_views : setting;
    const std::string label = setting == 0 ? "all" : std::to_string(setting);
    struct Sample {
      double loss = 0, pos = 0, neg = 0, same = 0;
    };
    std::vector<Sample> per(static_cast<std::size_t>(batches));
    parallel_for(per.size(), jobs, [&](std::size_t b) {
      const auto batch = sampler::assemble_batch(sets, batch_size, vpb,
                                                 derive_seed(seed, {"batch", label, std::to_string(b)}));
      const auto n = static_cast<Eigen::Index>(batch.size());
      sampler::DescMatrix a, p;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto da = fn(batch.anchors[static_cast<std::size_t>(i)]);
        const auto dp = fn(batch.positives[static_cast<std::size_t>(i)]);
        if (i == 0) {
          a.resize(n, static_cast<Eigen::Index>(da.size()));
          p.resize(n, static_cast<Eigen::Index>(dp.size()));
        }
        for (Eigen::Index d = 0; d < a.cols(); ++d) {
          a(i, d) = da[static_cast<std::size_t>(d)];
          p(i, d) = dp[static_cast<std::size_t>(d)];
        }
      }
      a.rowwise().normalize();
      p.rowwise().normalize();
      const auto t = sampler::hard_in_batch_triplet_loss(a, p, margin);
      Sample s;
      s.loss = t.loss;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        s.pos += t.positive_distance[k];
        s.neg += t.negative_distance[k];
        s.same += batch.view_ids[static_cast<std::size_t>(t.hardest_negative[k])] == batch.view_ids[k] ? 1.0 : 0.0;
      }
      s.pos /= static_cast<double>(n);
      s.neg /= static_cast<double>(n);
      s.same /= static_cast<double>(n);
      per[b] = s;
    });
    BatchCompositionRow row{label, vpb, 0, 0, 0, 0};
    for (const auto& s : per) {
      row.mean_loss += s.loss;
      row.mean_positive += s.pos;
      row.mean_hardest_negative += s.neg;
      row.same_view_negative_share += s.same;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    row.mean_loss *= inv;
    row.mean_positive *= inv;
    row.mean_hardest_negative *= inv;
    row.same_view_negative_share *= inv;
    rep.rows.push_back(row);
  }
  std::stable_sort(rep.rows.begin(), rep.rows.end(),
                   [](const auto& x, const auto& y) { return x.views_per_batch < y.views_per_batch; });
  return rep;
}

inline std::string format_batch_report(const BatchCompositionReport& r) {
  std::ostringstream out;
  out.precision(10);
  out << "# batch_size " << r.batch_size << "\n# batches " << r.batches << "\n# seed " << r.seed << '\n';
  out << "# views_per_batch resolved mean_loss mean_positive mean_hardest_negative same_view_negative_share\n";
  for (const auto& row : r.rows) {
    out << row.label << ' ' << row.views_per_batch << ' ' << row.mean_loss << ' ' << row.mean_positive << ' '
        << row.mean_hardest_negative << ' ' << row.same_view_negative_share << '\n';
  }
  out << "monotone " << (r.monotone() ? "yes" : "no") << '\n';
  return out.str();
}

}  // namespace amos::eval
