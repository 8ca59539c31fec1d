#pragma once

#include "amos/geom/views.hpp"
#include "amos/imgcore/homography.hpp"
#include "amos/imgcore/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace amos::pipeline {

// Camera kinds:
//   static   one viewpoint, jitter and day/night photometric drift
//   switch   viewpoint pans away at frame `switch_at`
//   dynamic  cars drawn and reported in the detection sidecars
//   black    every frame near-black
//   moving   an undetected object crosses the scene
//   dup      same scene as camera 0, slightly shifted
struct SynthOptions {
  int n_cameras = 3;
  int frames = 60;
  int width = 720;
  int height = 720;
  std::uint64_t seed = 0;
  std::vector<std::string> kinds;  // empty: cycle through kDefaultKinds
  int switch_at = 52;
  int embedding_dim = 64;
  double sensor_noise = 5.0;
  double jitter_px = 2.5;
};

inline const std::vector<std::string> kDefaultKinds{"static", "switch", "static", "dynamic", "black", "moving", "dup"};

struct SynthFrame {
  std::string image_id;  // camera/frame
  int viewpoint = 0;
  Homography frame_to_scene;  // frame pixel -> base-scene pixel
};

struct SynthCamera {
  std::string camera_id;
  std::string kind;
  std::vector<SynthFrame> frames;
};

struct SynthTruth {
  std::vector<SynthCamera> cameras;
};

/// Writes <out>/<camera>/fNNN.png and fNNN.det, <out>/embeddings.amem
/// (ids "camera/fNNN") and <out>/truth.txt.
SynthTruth make_synthetic_cameras(const std::filesystem::path& out, const SynthOptions& opt);

SynthTruth read_truth(const std::filesystem::path& path);

/// Band-limited noise plus solid rectangles, with a per-seed style.
GrayImage synthetic_scene(int w, int h, std::uint64_t seed);

/// Frame -> frame homography (moving frame pixel -> reference frame pixel).
Homography truth_to_reference(const SynthFrame& reference, const SynthFrame& moving);

/// Ground-truth views: one per (camera, viewpoint) of the listed kinds, first
/// frame as reference, already marked registered. Ids are "<camera>-t<vp>".
std::vector<geom::View> truth_views(const SynthTruth& truth, const std::vector<std::string>& kinds = {"static", "switch"});

}  // namespace amos::pipeline
