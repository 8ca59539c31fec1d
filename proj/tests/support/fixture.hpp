#pragma once

// Pipeline-level fixtures: patch sets sampled from ground-truth views and
// manifest comparison helpers.

#include "amos/common/rng.hpp"
#include "amos/pipeline/artifacts.hpp"
#include "amos/pipeline/hashing.hpp"
#include "amos/pipeline/synth.hpp"
#include "amos/sampler/patches.hpp"
#include "amos/sampler/response.hpp"

#include <json.hpp>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

namespace amos::testing {

/// n patch sets sampled with the production mask and spec sampler.
inline std::vector<sampler::PatchSet> sample_view_sets(const geom::View& view, const std::vector<GrayImage>& images, int n,
                                                       std::uint64_t seed, std::uint64_t first_id = 0,
                                                       const sampler::SamplingRanges& ranges = {}) {
  const auto warped = sampler::warp_to_reference(view, images);
  const auto mask = sampler::build_probability_mask(warped, sampler::MaskMode::average_then_response);
  const auto geometry = sampler::member_geometry(view, images);
  const auto specs = sampler::sample_patch_specs(mask, n, ranges, geometry, seed);
  std::vector<sampler::PatchSet> out;
  for (std::size_t k = 0; k < specs.size(); ++k) out.push_back(sampler::extract_patch_set(view, images, specs[k], 96, first_id + k));
  return out;
}

/// Patch sets from every ground-truth view of a synthetic camera directory.
inline std::vector<sampler::PatchSet> truth_dataset(const std::filesystem::path& input, int sets_per_view, std::uint64_t seed) {
  const auto truth = pipeline::read_truth(input / "truth.txt");
  const auto idx = pipeline::scan_inputs(input);
  std::vector<sampler::PatchSet> all;
  std::uint64_t next = 0;
  for (const auto& view : pipeline::truth_views(truth)) {
    const auto images = pipeline::load_view_images(view, idx, 1);
    auto sets = sample_view_sets(view, images, sets_per_view, derive_seed(seed, {"fixture", view.view_id}), next);
    next += sets.size();
    for (auto& s : sets) all.push_back(std::move(s));
  }
  return all;
}

/// Manifest text with every timestamp field removed, one record per line.
inline std::string manifest_without_timestamps(const std::filesystem::path& path) {
  std::istringstream in(pipeline::read_file(path));
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    for (const char* key : {"started", "finished", "timestamp"}) j.erase(key);
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace amos::testing
