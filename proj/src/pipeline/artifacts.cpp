#include "amos/pipeline/artifacts.hpp"

#include "amos/common/parallel.hpp"
#include "amos/pipeline/hashing.hpp"
#include "amos/pipeline/imageio.hpp"

#include <stdexcept>

namespace amos::pipeline {

const std::filesystem::path& InputIndex::path_of(const std::string& image_id) const {
  const auto it = image_paths.find(image_id);
  if (it == image_paths.end()) throw std::runtime_error("unknown image id: " + image_id);
  return it->second;
}

InputIndex scan_inputs(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw std::runtime_error("input root is not a directory: " + root.string());
  InputIndex idx;
  idx.root = root;
  for (const auto& cam : fs::directory_iterator(root)) {
    if (!cam.is_directory()) continue;
    const std::string cam_id = cam.path().filename().string();
    std::vector<std::string> ids;
    for (const auto& f : fs::directory_iterator(cam.path())) {
      if (!f.is_regular_file() || !is_image_file(f.path())) continue;
      const std::string id = cam_id + "/" + f.path().stem().string();
      if (!idx.image_paths.emplace(id, f.path()).second) {
        throw std::runtime_error("two images share the id " + id);
      }
      ids.push_back(id);
    }
    if (ids.empty()) continue;
    std::sort(ids.begin(), ids.end());
    idx.camera_images[cam_id] = std::move(ids);
  }
  if (idx.camera_images.empty()) throw std::runtime_error("no camera directories with images under " + root.string());
  return idx;
}

std::filesystem::path sidecar_path(const std::filesystem::path& image_path) {
  auto p = image_path;
  p.replace_extension(".det");
  return p;
}

json view_to_json(const StoredView& v) {
  json members = json::array();
  for (const auto& m : v.view.members) members.push_back({{"image_id", m.image_id}, {"h", m.to_reference.row_major()}});
  return {{"view_id", v.view.view_id},
          {"camera_id", v.camera_id},
          {"reference", v.view.reference_image_id},
          {"status", geom::to_string(v.view.status)},
          {"failure_reason", v.view.failure_reason},
          {"members", members}};
}

StoredView view_from_json(const json& j) {
  StoredView v;
  v.camera_id = j.at("camera_id");
  v.view.view_id = j.at("view_id");
  v.view.reference_image_id = j.at("reference");
  v.view.status = geom::view_status_from_string(j.at("status"));
  v.view.failure_reason = j.value("failure_reason", "");
  for (const auto& m : j.at("members")) {
    v.view.members.push_back({m.at("image_id"), Homography::from_row_major(m.at("h").get<std::array<double, 9>>())});
  }
  return v;
}

std::vector<StoredView> load_views(const std::filesystem::path& path) {
  std::vector<StoredView> out;
  const json doc = read_json(path);
  for (const auto& j : doc.at("views")) out.push_back(view_from_json(j));
  return out;
}

std::vector<GrayImage> load_view_images(const geom::View& view, const InputIndex& index, int jobs) {
  std::vector<GrayImage> images(view.members.size());
  parallel_for(view.members.size(), jobs, [&](std::size_t i) {
    const auto& p = index.path_of(view.members[i].image_id);
    auto img = load_gray(p);
    if (!img) throw std::runtime_error("cannot decode " + p.string());
    images[i] = std::move(*img);
  });
  return images;
}

void write_json(const std::filesystem::path& path, const json& j) { write_file_atomic(path, j.dump(1) + "\n"); }

json read_json(const std::filesystem::path& path) { return json::parse(read_file(path)); }

}  // namespace amos::pipeline
