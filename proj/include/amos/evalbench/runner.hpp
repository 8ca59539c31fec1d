#pragma once

#include "amos/cluster/embeddings.hpp"
#include "amos/common/parallel.hpp"
#include "amos/common/rng.hpp"
#include "amos/evalbench/metrics.hpp"
#include "amos/imgcore/filters.hpp"
#include "amos/sampler/dataset.hpp"
#include "amos/sampler/patches.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace amos::eval {

inline constexpr int kEvalPatchSide = 32;

/// Mean/std-normalized, flattened, L2-normalized 32x32 patch (D = 1024).
inline std::vector<float> baseline_descriptor(const GrayImage& patch) {
  if (patch.width() != kEvalPatchSide || patch.height() != kEvalPatchSide) {
    throw std::invalid_argument("baseline_descriptor: expected a 32x32 patch");
  }
  std::vector<float> v(patch.pixels().begin(), patch.pixels().end());
  normalize_patch(v);
  return v;
}

/// Central 64x64 of a 96x96 patch, 2x2-averaged to 32x32.
inline GrayImage eval_patch(const GrayImage& p) {
  if (p.width() != 96 || p.height() != 96) throw std::invalid_argument("eval_patch: expected a 96x96 patch");
  GrayImage out(kEvalPatchSide, kEvalPatchSide);
  for (int y = 0; y < kEvalPatchSide; ++y) {
    for (int x = 0; x < kEvalPatchSide; ++x) {
      const int sx = 16 + 2 * x, sy = 16 + 2 * y;
      out(x, y) = 0.25F * (p(sx, sy) + p(sx + 1, sy) + p(sx, sy + 1) + p(sx + 1, sy + 1));
    }
  }
  return out;
}

using DescriptorFn = std::function<std::vector<float>(const GrayImage&)>;

/// Key under which an external descriptor file stores patch `member` of a set.
inline std::string descriptor_key(std::uint64_t set_id, std::size_t member) {
  return std::to_string(set_id) + ":" + std::to_string(member);
}

/// One descriptor row per (record, member) of a patch file.
struct DescriptorTable {
  std::size_t set_size = 0;
  DescriptorRows rows;  // row = record_index * set_size + member

  [[nodiscard]] auto row(std::size_t record, std::size_t member) const {
    return rows.row(static_cast<Eigen::Index>(record * set_size + member));
  }
};

inline DescriptorTable describe_file(const sampler::PatchFile& f, const DescriptorFn& fn, int jobs = 1) {
  DescriptorTable t;
  t.set_size = f.set_size;
  const std::size_t total = f.records.size() * f.set_size;
  std::vector<std::vector<float>> rows(total);
  parallel_for(total, jobs, [&](std::size_t k) {
    const std::size_t r = k / f.set_size, m = k % f.set_size;
    rows[k] = fn(eval_patch(sampler::record_patch(f, f.records[r], m)));
  });
  const auto dim = total ? rows[0].size() : 0;
  t.rows.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(dim));
  for (std::size_t k = 0; k < total; ++k) {
    if (rows[k].size() != dim) throw std::invalid_argument("describe_file: descriptor dimension varies between patches");
    for (std::size_t d = 0; d < dim; ++d) t.rows(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d)) = rows[k][d];
  }
  return t;
}

/// External descriptors keyed "set_id:member" (AMEM file), reordered to the
/// patch file's layout.
inline DescriptorTable table_from_embeddings(const sampler::PatchFile& f, const cluster::EmbeddingSet& e) {
  e.validate();
  std::map<std::string, Eigen::Index> index;
  for (std::size_t i = 0; i < e.image_ids.size(); ++i) index.emplace(e.image_ids[i], static_cast<Eigen::Index>(i));
  DescriptorTable t;
  t.set_size = f.set_size;
  t.rows.resize(static_cast<Eigen::Index>(f.records.size() * f.set_size), e.dim());
  for (std::size_t r = 0; r < f.records.size(); ++r) {
    for (std::size_t m = 0; m < f.set_size; ++m) {
      const auto it = index.find(descriptor_key(f.records[r].set_id, m));
      if (it == index.end()) throw std::invalid_argument("external descriptors: missing " + descriptor_key(f.records[r].set_id, m));
      t.rows.row(static_cast<Eigen::Index>(r * f.set_size + m)) = e.vectors.row(it->second).cast<float>();
    }
  }
  for (Eigen::Index i = 0; i < t.rows.rows(); ++i) {
    if (std::abs(t.rows.row(i).norm() - 1.0F) > 1e-4F) throw std::invalid_argument("external descriptors: rows must be unit norm");
  }
  return t;
}

inline cluster::EmbeddingSet table_to_embeddings(const sampler::PatchFile& f, const DescriptorTable& t) {
  cluster::EmbeddingSet e;
  e.vectors = t.rows.cast<double>();
  for (const auto& r : f.records)
    for (std::size_t m = 0; m < f.set_size; ++m) e.image_ids.push_back(descriptor_key(r.set_id, m));
  return e;
}

struct PairAp {
  std::string pair_id;  // view:i:j
  double ap = 0.0;
};

struct EvalReport {
  std::vector<PairAp> pairs;
  double map = 0.0;
  std::size_t skipped_views = 0;  // fewer than two patch sets
  std::vector<std::pair<std::string, std::string>> config;
};

namespace detail {

inline double mean_ap(const std::vector<PairAp>& pairs) {
  if (pairs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& p : pairs) s += p.ap;
  return s / static_cast<double>(pairs.size());
}

// For one view: rows of A-side member i and B-side member j for every kept set.
struct ViewTask {
  std::string view_name;
  std::vector<std::size_t> records;
};

inline std::vector<ViewTask> group_by_view(const sampler::PatchFile& f, const std::vector<std::string>& view_names) {
  std::map<std::uint32_t, std::vector<std::size_t>> by;
  for (std::size_t r = 0; r < f.records.size(); ++r) by[f.records[r].view_ordinal].push_back(r);
  std::vector<ViewTask> out;
  for (auto& [ord, recs] : by) {
    std::sort(recs.begin(), recs.end(), [&](std::size_t x, std::size_t y) { return f.records[x].set_id < f.records[y].set_id; });
    const std::string name = ord < view_names.size() ? view_names[ord] : std::to_string(ord);
    out.push_back({name, recs});
  }
  return out;
}

inline DescriptorRows gather(const DescriptorTable& t, const std::vector<std::size_t>& records, std::size_t member) {
  DescriptorRows m(static_cast<Eigen::Index>(records.size()), t.rows.cols());
  for (std::size_t k = 0; k < records.size(); ++k) m.row(static_cast<Eigen::Index>(k)) = t.row(records[k], member);
  return m;
}

// All ordered member pairs (i != j) of each view; A from `a`, B from `b`.
inline EvalReport ordered_pair_eval(const std::vector<ViewTask>& views, std::size_t set_size, const DescriptorTable& a,
                                    const DescriptorTable& b, int jobs) {
  struct Job {
    std::size_t view, i, j;
  };
  std::vector<Job> jobs_list;
  EvalReport rep;
  std::vector<std::vector<DescriptorRows>> side_a(views.size()), side_b(views.size());
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (views[v].records.size() < 2) {
      ++rep.skipped_views;
      continue;
    }
    for (std::size_t m = 0; m < set_size; ++m) {
      side_a[v].push_back(gather(a, views[v].records, m));
      side_b[v].push_back(gather(b, views[v].records, m));
    }
    for (std::size_t i = 0; i < set_size; ++i)
      for (std::size_t j = 0; j < set_size; ++j)
        if (i != j) jobs_list.push_back({v, i, j});
  }
  rep.pairs.resize(jobs_list.size());
  parallel_for(jobs_list.size(), jobs, [&](std::size_t k) {
    const auto& jb = jobs_list[k];
    const auto& va = side_a[jb.view][jb.i];
    const auto& vb = side_b[jb.view][jb.j];
    rep.pairs[k] = {views[jb.view].view_name + ":" + std::to_string(jb.i) + ":" + std::to_string(jb.j),
                    match_task_ap(va, vb, identity_bijection(static_cast<std::size_t>(va.rows())))};
  });
  rep.map = mean_ap(rep.pairs);
  return rep;
}

}  // namespace detail

/// Matching task over every view and every ordered member pair (i, j):
/// A = i-th patches, B = j-th patches of the view's sets, identity ground truth.
inline EvalReport run_matching_eval(const sampler::PatchFile& test, const DescriptorTable& table,
                                    const std::vector<std::string>& view_names = {}, int jobs = 1) {
  if (test.records.empty()) throw std::invalid_argument("run_matching_eval: empty test split");
  if (table.rows.rows() != static_cast<Eigen::Index>(test.records.size() * test.set_size)) {
    throw std::invalid_argument("run_matching_eval: descriptor table does not match the patch file");
  }
  return detail::ordered_pair_eval(detail::group_by_view(test, view_names), test.set_size, table, table, jobs);
}

inline EvalReport run_matching_eval(const sampler::PatchFile& test, const DescriptorFn& fn,
                                    const std::vector<std::string>& view_names = {}, int jobs = 1) {
  return run_matching_eval(test, describe_file(test, fn, jobs), view_names, jobs);
}

inline std::string format_report(const EvalReport& r) {
  std::ostringstream out;
  out.precision(10);
  for (const auto& [k, v] : r.config) out << "# " << k << ' ' << v << '\n';
  for (const auto& p : r.pairs) out << p.pair_id << ' ' << p.ap << '\n';
  out << "mAP " << r.map << '\n';
  return out.str();
}

/// Inputs for re-extraction: a registered view, its images (member order) and
/// the test specs sampled in it.
struct DeregSource {
  geom::View view;
  std::vector<GrayImage> images;
  std::vector<std::uint64_t> set_ids;
  std::vector<sampler::PatchSpec> specs;
};

struct DeregPoint {
  double shift = 0.0;
  double map = 0.0;
  std::size_t pairs = 0;
  std::size_t dropped_specs = 0;
};

/// Unit direction of the displacement applied to one patch set; fixed per
/// (seed, set_id) so every shift moves a patch along the same ray.
inline Eigen::Vector2d dereg_direction(std::uint64_t seed, std::uint64_t set_id) {
  auto rng = make_rng(derive_seed(seed, {"dereg", std::to_string(set_id)}));
  const double t = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  return {std::cos(t), std::sin(t)};
}

/// For each shift: B-side patches are re-extracted from specs displaced by
/// `shift` pixels; specs whose displacement leaves a member are dropped.
/// Patches pass through u8 like exported data, so shift 0 reproduces the
/// plain evaluation of the same sets.
inline std::vector<DeregPoint> deregistration_experiment(std::span<const DeregSource> sources, const std::vector<double>& shifts,
                                                         const DescriptorFn& fn, std::uint64_t seed, int jobs = 1) {
  if (std::find(shifts.begin(), shifts.end(), 0.0) == shifts.end()) {
    throw std::invalid_argument("deregistration_experiment: shifts must include 0");
  }
  std::vector<DeregPoint> out;
  for (double s : shifts) {
    DeregPoint pt;
    pt.shift = s;
    std::vector<detail::ViewTask> tasks;
    sampler::PatchFile fa, fb;
    std::size_t set_size = 0;
    std::vector<std::string> names;
    for (std::size_t v = 0; v < sources.size(); ++v) {
      const auto& src = sources[v];
      const auto geometry = sampler::member_geometry(src.view, src.images);
      if (v == 0) set_size = src.view.members.size();
      if (src.view.members.size() != set_size) throw std::invalid_argument("deregistration_experiment: views differ in size");
      std::vector<sampler::PatchSpec> kept_a, kept_b;
      std::vector<std::uint64_t> kept_ids;
      for (std::size_t k = 0; k < src.specs.size(); ++k) {
        sampler::PatchSpec moved = src.specs[k];
        const Eigen::Vector2d d = dereg_direction(seed, src.set_ids[k]) * s;
        moved.x += d.x();
        moved.y += d.y();
        if (!sampler::spec_fits(moved, geometry)) {
          ++pt.dropped_specs;
          continue;
        }
        kept_a.push_back(src.specs[k]);
        kept_b.push_back(moved);
        kept_ids.push_back(src.set_ids[k]);
      }
      std::vector<sampler::PatchRecord> ra(kept_a.size()), rb(kept_b.size());
      parallel_for(kept_a.size(), jobs, [&](std::size_t k) {
        ra[k] = sampler::to_record(sampler::extract_patch_set(src.view, src.images, kept_a[k], 96, kept_ids[k]),
                                   static_cast<std::uint32_t>(v));
        rb[k] = sampler::to_record(sampler::extract_patch_set(src.view, src.images, kept_b[k], 96, kept_ids[k]),
                                   static_cast<std::uint32_t>(v));
      });
      for (auto& r : ra) fa.records.push_back(std::move(r));
      for (auto& r : rb) fb.records.push_back(std::move(r));
      names.push_back(src.view.view_id);
    }
    fa.set_size = fb.set_size = static_cast<std::uint32_t>(set_size);
    const auto ta = describe_file(fa, fn, jobs);
    const auto tb = describe_file(fb, fn, jobs);
    const auto rep = detail::ordered_pair_eval(detail::group_by_view(fa, names), set_size, ta, tb, jobs);
    pt.map = rep.map;
    pt.pairs = rep.pairs.size();
    out.push_back(pt);
  }
  return out;
}

}  // namespace amos::eval
