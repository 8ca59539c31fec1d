#pragma once

#include "amos/common/parallel.hpp"
#include "amos/common/rng.hpp"
#include "amos/gate/sidecar.hpp"
#include "amos/imgcore/filters.hpp"
#include "amos/imgcore/image.hpp"
#include "amos/imgcore/thresholds.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace amos::gate {

enum class SidecarPolicy { strict, lenient };

struct GateConfig {
  FilterThresholds thresholds;
  double det_conf_min = 0.5;
  SidecarPolicy missing_sidecar = SidecarPolicy::strict;
  std::vector<std::string> dynamic_classes{"car", "boat"};
};

inline constexpr int kFilterCount = 5;

/// Outcome of f1 (sky) .. f5 (size) for one image; pass is their conjunction.
struct FilterReport {
  std::string image_id;
  std::array<bool, kFilterCount> f{};
  bool pass = false;
  bool sidecar_missing = false;
  bool corrupted = false;
  double sky_fraction = 0.0;
  double lap_var = 0.0;
  double mean = 0.0;
};

struct CameraDecision {
  std::string camera_id;
  std::vector<std::string> sampled_image_ids;
  std::vector<FilterReport> reports;
  int passing = 0;
  bool kept = false;
  std::array<int, kFilterCount> failure_counts{};
};

inline FilterReport check_image(const GrayImage& img, const std::optional<DetectionSidecar>& sidecar,
                                const GateConfig& cfg, std::string image_id = {}) {
  const auto& th = cfg.thresholds;
  FilterReport r;
  r.image_id = image_id.empty() && sidecar ? sidecar->image_id : std::move(image_id);
  if (sidecar) {
    r.sky_fraction = sidecar->sky_fraction;
    r.f[0] = sidecar->sky_fraction < th.sky_max;
    r.f[1] = std::none_of(sidecar->detections.begin(), sidecar->detections.end(), [&](const Detection& d) {
      return d.confidence >= cfg.det_conf_min &&
             std::find(cfg.dynamic_classes.begin(), cfg.dynamic_classes.end(), d.label) != cfg.dynamic_classes.end();
    });
  } else {
    r.sidecar_missing = true;
    r.f[0] = r.f[1] = cfg.missing_sidecar == SidecarPolicy::lenient;
  }
  r.lap_var = img.width() >= 3 && img.height() >= 3 ? laplacian_variance(img) : 0.0;
  r.mean = mean_intensity(img);
  r.f[2] = r.lap_var >= th.lap_var_min;
  r.f[3] = r.mean > th.mean_min;
  r.f[4] = img.width() > th.min_width && img.height() > th.min_height;
  r.pass = std::all_of(r.f.begin(), r.f.end(), [](bool b) { return b; });
  return r;
}

/// Report for an image that could not be decoded: fails every filter.
inline FilterReport corrupted_report(std::string image_id) {
  FilterReport r;
  r.image_id = std::move(image_id);
  r.corrupted = true;
  return r;
}

struct CameraEntry {
  std::string camera_id;
  std::vector<std::string> image_ids;
};

/// Result of loading one image and its sidecar. A missing image means the
/// file was unreadable or corrupted.
struct LoadedImage {
  std::optional<GrayImage> image;
  std::optional<DetectionSidecar> sidecar;
};

using ImageLoader = std::function<LoadedImage(const std::string& camera_id, const std::string& image_id)>;

/// Uniform sample without replacement, drawn from the sorted id list with a
/// stream derived from (seed, camera_id). Preserves sorted order.
inline std::vector<std::string> sample_images(const CameraEntry& cam, int sample_size, std::uint64_t seed) {
  std::vector<std::string> ids = cam.image_ids;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (static_cast<int>(ids.size()) <= sample_size) return ids;
  std::vector<std::string> out;
  auto rng = make_rng(derive_seed(seed, {"gate", cam.camera_id}));
  std::sample(ids.begin(), ids.end(), std::back_inserter(out), sample_size, rng);
  return out;
}

inline CameraDecision decide_camera(const std::string& camera_id, std::vector<std::string> sampled,
                                    std::vector<FilterReport> reports, const FilterThresholds& th) {
  CameraDecision d;
  d.camera_id = camera_id;
  d.sampled_image_ids = std::move(sampled);
  d.reports = std::move(reports);
  for (const auto& r : d.reports) {
    if (r.pass) ++d.passing;
    for (int k = 0; k < kFilterCount; ++k)
      if (!r.f[static_cast<std::size_t>(k)]) ++d.failure_counts[static_cast<std::size_t>(k)];
  }
  d.kept = d.passing >= th.pass_min;
  return d;
}

inline std::vector<CameraDecision> select_cameras(std::span<const CameraEntry> cameras, const GateConfig& cfg,
                                                  std::uint64_t seed, const ImageLoader& load, int jobs = 1) {
  cfg.thresholds.validate();
  std::vector<CameraDecision> out(cameras.size());
  parallel_for(cameras.size(), jobs, [&](std::size_t c) {
    const auto& cam = cameras[c];
    if (cam.image_ids.empty()) throw std::invalid_argument("select_cameras: camera " + cam.camera_id + " has no images");
    auto sampled = sample_images(cam, cfg.thresholds.sample_size, seed);
    std::vector<FilterReport> reports;
    reports.reserve(sampled.size());
    for (const auto& id : sampled) {
      LoadedImage li = load(cam.camera_id, id);
      if (!li.image) {
        reports.push_back(corrupted_report(id));
        continue;
      }
      if (li.sidecar) li.sidecar->clip(li.image->width(), li.image->height());
      reports.push_back(check_image(*li.image, li.sidecar, cfg, id));
    }
    out[c] = decide_camera(cam.camera_id, std::move(sampled), std::move(reports), cfg.thresholds);
  });
  return out;
}

}  // namespace amos::gate
