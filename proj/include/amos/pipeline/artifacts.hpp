#pragma once

#include "amos/geom/views.hpp"
#include "amos/imgcore/image.hpp"
#include "amos/pipeline/manifest.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace amos::pipeline {

/// Cameras found under the input root: one subdirectory per camera, image
/// files inside it. Image ids are "<camera>/<file stem>".
struct InputIndex {
  std::filesystem::path root;
  std::map<std::string, std::vector<std::string>> camera_images;  // sorted ids
  std::map<std::string, std::filesystem::path> image_paths;

  [[nodiscard]] const std::filesystem::path& path_of(const std::string& image_id) const;
};

InputIndex scan_inputs(const std::filesystem::path& root);

std::filesystem::path sidecar_path(const std::filesystem::path& image_path);

struct StoredView {
  std::string camera_id;
  geom::View view;
};

json view_to_json(const StoredView& v);
StoredView view_from_json(const json& j);

std::vector<StoredView> load_views(const std::filesystem::path& path);

/// Member images in member order; throws if any is missing or unreadable.
std::vector<GrayImage> load_view_images(const geom::View& view, const InputIndex& index, int jobs = 1);

void write_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

}  // namespace amos::pipeline
