#pragma once

#include "amos/gate/gate.hpp"
#include "amos/geom/registration.hpp"
#include "amos/geom/views.hpp"
#include "amos/sampler/patches.hpp"
#include "amos/sampler/response.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace amos::pipeline {

/// Every tunable of a run. Keys in the config file are the field names below.
struct PipelineConfig {
  std::string input_root = "input";
  std::string output_root = "out";
  std::uint64_t seed = 0;
  int jobs = 1;

  FilterThresholds thresholds;
  double det_conf_min = 0.5;
  std::string missing_sidecar = "strict";

  int k = 120;
  bool normalize_embeddings = false;

  int min_inliers = 50;
  double max_sad = 50.0;
  int view_min = 50;
  int view_cap = 50;
  int max_keypoints = 2000;
  double ratio = 0.8;
  double inlier_px = 2.0;
  int ransac_iters = 2000;

  int pyramid_levels = 3;
  int refine_max_iters = 50;
  double ncc_min = 0.8;

  std::string mask_mode = "average-then-response";
  double mask_sigma = 2.0;
  int n_patch_sets = 30000;
  double scale_min = 67.0;
  double scale_max = 138.0;
  double angle_max_deg = 15.0;

  double test_fraction = 0.2;
  std::string eval_descriptors;  // optional AMEM file keyed "set_id:member"
  std::string dereg_shifts = "0,1,2,4,8,16";

  double flag_dynamic_std = 25.0;
  double flag_dynamic_fraction = 0.02;
  double flag_exposure_std = 30.0;
  double flag_duplicate_cos = 0.95;

  [[nodiscard]] gate::GateConfig gate_config() const;
  [[nodiscard]] geom::ViewClusterRule cluster_rule() const { return {min_inliers, max_sad}; }
  [[nodiscard]] geom::MatcherConfig matcher_config() const;
  [[nodiscard]] geom::RefineOptions refine_options() const;
  [[nodiscard]] sampler::SamplingRanges sampling_ranges() const;
  [[nodiscard]] sampler::MaskMode parsed_mask_mode() const { return sampler::mask_mode_from_string(mask_mode); }
  [[nodiscard]] std::vector<double> parsed_dereg_shifts() const;

  void validate() const;
};

/// (key, value) in declaration order.
std::vector<std::pair<std::string, std::string>> to_pairs(const PipelineConfig& c);

/// Keys whose values do not change any artifact (paths, parallelism).
bool is_runtime_key(const std::string& key);

/// Stage whose outputs a key influences; "*" for keys every stage depends on.
std::string key_stage(const std::string& key);

void set_value(PipelineConfig& c, const std::string& key, const std::string& value);

/// Flat `key = value` text; `#` starts a comment. Unknown keys are errors.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string format_config(const PipelineConfig& c);

/// SHA-256 over the keys the stage depends on (plus the "*" keys).
std::string stage_config_hash(const PipelineConfig& c, const std::string& stage);

}  // namespace amos::pipeline
