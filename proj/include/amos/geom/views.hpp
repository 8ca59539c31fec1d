#pragma once

#include "amos/common/parallel.hpp"
#include "amos/common/rng.hpp"
#include "amos/geom/features.hpp"
#include "amos/geom/ransac.hpp"
#include "amos/imgcore/homography.hpp"
#include "amos/imgcore/image.hpp"

#include <algorithm>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace amos::geom {

/// Join rule for viewpoint clustering; both comparisons are strict.
struct ViewClusterRule {
  int min_inliers = 50;  // joins only with more inliers than this
  double max_sad = 50.0;  // joins only with SAD(H, I3) below this
};

enum class ViewStatus { raw, registered, accepted, rejected };

inline const char* to_string(ViewStatus s) {
  switch (s) {
    case ViewStatus::raw: return "raw";
    case ViewStatus::registered: return "registered";
    case ViewStatus::accepted: return "accepted";
    case ViewStatus::rejected: return "rejected";
  }
  return "raw";
}

inline ViewStatus view_status_from_string(const std::string& s) {
  if (s == "raw") return ViewStatus::raw;
  if (s == "registered") return ViewStatus::registered;
  if (s == "accepted") return ViewStatus::accepted;
  if (s == "rejected") return ViewStatus::rejected;
  throw std::invalid_argument("unknown view status: " + s);
}

struct ViewMember {
  std::string image_id;
  Homography to_reference;  // member pixel coordinates -> reference pixel coordinates
};

/// A static-viewpoint episode. members[0] is the reference with identity.
struct View {
  std::string view_id;
  std::string reference_image_id;
  std::vector<ViewMember> members;
  ViewStatus status = ViewStatus::raw;
  std::string failure_reason;

  [[nodiscard]] std::size_t size() const noexcept { return members.size(); }
};

/// Result of matching a candidate image against a reference.
struct PairOutcome {
  bool matched = false;
  int inliers = 0;
  Homography h;  // candidate -> reference
};

inline bool joins_view(const PairOutcome& o, const ViewClusterRule& rule) {
  return o.matched && o.inliers > rule.min_inliers && sad_to_identity(o.h) < rule.max_sad;
}

using PairMatcher = std::function<PairOutcome(std::size_t reference, std::size_t candidate)>;

/// Greedy reference loop: the first remaining image becomes a reference,
/// every other remaining image that satisfies the rule joins its view, and
/// the view's images leave the pool. Unmatched images end up as singletons.
inline std::vector<View> cluster_views(const std::vector<std::string>& image_ids, const PairMatcher& match,
                                       const ViewClusterRule& rule, int jobs = 1, const std::string& id_prefix = "v") {
  std::vector<std::size_t> remaining(image_ids.size());
  for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] = i;
  std::vector<View> views;
  while (!remaining.empty()) {
    const std::size_t ref = remaining.front();
    std::vector<std::size_t> candidates(remaining.begin() + 1, remaining.end());
    std::vector<PairOutcome> outcomes(candidates.size());
    parallel_for(candidates.size(), jobs, [&](std::size_t k) { outcomes[k] = match(ref, candidates[k]); });

    View v;
    v.view_id = id_prefix + std::to_string(views.size());
    v.reference_image_id = image_ids[ref];
    v.members.push_back({image_ids[ref], Homography::identity()});
    std::vector<std::size_t> left;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      if (joins_view(outcomes[k], rule)) {
        v.members.push_back({image_ids[candidates[k]], outcomes[k].h});
      } else {
        left.push_back(candidates[k]);
      }
    }
    views.push_back(std::move(v));
    remaining = std::move(left);
  }
  return views;
}

struct MatcherConfig {
  int max_keypoints = 2000;
  double ratio = 0.8;
  RansacOptions ransac;
};

struct ImageFeatures {
  std::vector<Keypoint> keypoints;
  Descriptors descriptors;
};

inline ImageFeatures compute_features(const GrayImage& img, const MatcherConfig& cfg) {
  ImageFeatures f;
  f.keypoints = detect_keypoints(img, cfg.max_keypoints);
  f.descriptors = describe_keypoints(img, f.keypoints);
  return f;
}

/// Ratio-test matching followed by RANSAC; the homography maps the candidate
/// onto the reference.
inline PairOutcome match_pair(const ImageFeatures& reference, const ImageFeatures& candidate,
                              const MatcherConfig& cfg, std::uint64_t seed) {
  PairOutcome out;
  const auto& dr = reference.descriptors;
  const auto& dc = candidate.descriptors;
  if (dc.vectors.rows() < 1 || dr.vectors.rows() < 2) return out;
  const auto matches = match_ratio(dc.vectors, dr.vectors, cfg.ratio);
  if (matches.size() < 4) return out;
  std::vector<Correspondence> pairs;
  pairs.reserve(matches.size());
  for (const auto& m : matches) {
    const auto& kc = candidate.keypoints[static_cast<std::size_t>(dc.keypoint_index[static_cast<std::size_t>(m.a)])];
    const auto& kr = reference.keypoints[static_cast<std::size_t>(dr.keypoint_index[static_cast<std::size_t>(m.b)])];
    pairs.push_back({Eigen::Vector2d(kc.x, kc.y), Eigen::Vector2d(kr.x, kr.y)});
  }
  const auto res = estimate_homography_ransac(pairs, cfg.ransac, seed);
  if (!res) return out;
  out.matched = true;
  out.inliers = res->inlier_count;
  out.h = res->h;
  return out;
}

/// Feature-based clustering; per-pair RANSAC seeds come from (seed, ids).
inline std::vector<View> cluster_views(const std::vector<std::string>& image_ids, std::span<const ImageFeatures> features,
                                       const ViewClusterRule& rule, const MatcherConfig& cfg, std::uint64_t seed,
                                       int jobs = 1, const std::string& id_prefix = "v") {
  if (features.size() != image_ids.size()) throw std::invalid_argument("cluster_views: features/id count mismatch");
  PairMatcher matcher = [&](std::size_t r, std::size_t c) {
    return match_pair(features[r], features[c], cfg, derive_seed(seed, {image_ids[r], image_ids[c]}));
  };
  return cluster_views(image_ids, matcher, rule, jobs, id_prefix);
}

inline std::vector<View> cluster_views(const std::vector<std::string>& image_ids, std::span<const GrayImage> images,
                                       const ViewClusterRule& rule, const MatcherConfig& cfg, std::uint64_t seed,
                                       int jobs = 1, const std::string& id_prefix = "v") {
  if (images.size() != image_ids.size()) throw std::invalid_argument("cluster_views: image/id count mismatch");
  std::vector<ImageFeatures> features(images.size());
  parallel_for(images.size(), jobs, [&](std::size_t i) { features[i] = compute_features(images[i], cfg); });
  return cluster_views(image_ids, std::span<const ImageFeatures>(features), rule, cfg, seed, jobs, id_prefix);
}

/// Largest view (ties: earliest) if it has more than min_size members,
/// reduced to `cap` members by uniform sampling; the reference always stays.
inline std::optional<View> keep_dominant_view(const std::vector<View>& views, int min_size, int cap, std::uint64_t seed) {
  const View* best = nullptr;
  for (const auto& v : views)
    if (!best || v.size() > best->size()) best = &v;
  if (!best || static_cast<int>(best->size()) <= min_size) return std::nullopt;
  View out = *best;
  if (static_cast<int>(out.size()) > cap) {
    std::vector<ViewMember> others(out.members.begin() + 1, out.members.end());
    std::vector<ViewMember> picked;
    auto rng = make_rng(derive_seed(seed, {"dominant", out.view_id}));
    std::sample(others.begin(), others.end(), std::back_inserter(picked), std::max(cap - 1, 0), rng);
    out.members.resize(1);
    out.members.insert(out.members.end(), picked.begin(), picked.end());
  }
  return out;
}

}  // namespace amos::geom
