#include "amos/pipeline/synth.hpp"

#include "amos/cluster/embeddings.hpp"
#include "amos/common/parallel.hpp"
#include "amos/common/rng.hpp"
#include "amos/gate/sidecar.hpp"
#include "amos/imgcore/filters.hpp"
#include "amos/imgcore/warp.hpp"
#include "amos/pipeline/hashing.hpp"
#include "amos/pipeline/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace amos::pipeline {

namespace {

GrayImage gaussian_noise(int w, int h, Rng& rng) {
  std::normal_distribution<float> n(0.0F, 1.0F);
  GrayImage img(w, h);
  for (auto& v : img.pixels()) v = n(rng);
  return img;
}

double rms(const GrayImage& img) {
  double s = 0;
  for (float v : img.pixels()) s += static_cast<double>(v) * v;
  return std::sqrt(s / static_cast<double>(img.size()));
}

std::string frame_name(int f) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "f%03d", f);
  return buf;
}

std::string camera_name(int c) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "cam%03d", c);
  return buf;
}

Homography rotation_about(double angle, double cx, double cy) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  const double c = std::cos(angle), s = std::sin(angle);
  m << c, -s, cx - c * cx + s * cy, s, c, cy - s * cx - c * cy, 0, 0, 1;
  return Homography(m);
}

struct Photometric {
  double gain = 1.0;
  double bias = 0.0;
  double gamma = 1.0;
};

// Slow day/night cycle over the sequence plus small per-frame wobble.
Photometric photometric(int f, int frames, Rng& rng) {
  const double t = 2.0 * std::numbers::pi * f / std::max(frames, 1);
  return {0.88 + 0.12 * std::cos(t) + uniform(rng, -0.02, 0.02), 6.0 * std::sin(t) + uniform(rng, -2.0, 2.0),
          1.0 + 0.04 * std::sin(0.5 * t)};
}

void apply_photometric(GrayImage& img, const Photometric& p, double noise, Rng& rng) {
  std::normal_distribution<double> n(0.0, noise);
  for (auto& v : img.pixels()) {
    const double g = 255.0 * std::pow(std::clamp(v / 255.0, 0.0, 1.0), p.gamma);
    v = static_cast<float>(std::clamp(p.gain * g + p.bias + n(rng), 0.0, 255.0));
  }
}

void fill_rect(GrayImage& img, int x0, int y0, int w, int h, float v) {
  for (int y = std::max(0, y0); y < std::min(img.height(), y0 + h); ++y)
    for (int x = std::max(0, x0); x < std::min(img.width(), x0 + w); ++x) img(x, y) = v;
}

}  // namespace

GrayImage synthetic_scene(int w, int h, std::uint64_t seed) {
  auto rng = make_rng(seed);
  // Per-scene style, so patches of one camera share a look the way real
  // webcam scenes do: texture scale, contrast split, brightness, clutter.
  const double fine_sigma = uniform(rng, 0.8, 1.3), coarse_sigma = uniform(rng, 4.0, 9.0);
  const double fine_amp = uniform(rng, 28.0, 45.0), coarse_amp = uniform(rng, 20.0, 45.0);
  const double level = uniform(rng, 105.0, 140.0), clutter = uniform(rng, 0.5, 1.5);
  GrayImage fine = gaussian_blur(gaussian_noise(w, h, rng), fine_sigma);
  GrayImage coarse = gaussian_blur(gaussian_noise(w, h, rng), coarse_sigma);
  const double sf = rms(fine), sc = rms(coarse);
  GrayImage img(w, h);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img.pixels()[i] = static_cast<float>(level + fine_amp * fine.pixels()[i] / sf + coarse_amp * coarse.pixels()[i] / sc);
  }
  std::uniform_int_distribution<int> px(0, w - 1), py(0, h - 1), sz(8, std::max(9, w / 10));
  std::uniform_real_distribution<double> val(20, 235);
  const int rects = static_cast<int>(clutter * (10 + w * h / 2000));
  for (int r = 0; r < rects; ++r) {
    const int x0 = px(rng), y0 = py(rng), s = sz(rng);
    const float v = static_cast<float>(val(rng));
    for (int y = y0; y < std::min(h, y0 + s); ++y)
      for (int x = x0; x < std::min(w, x0 + s); ++x) img(x, y) = 0.3F * img(x, y) + 0.7F * v;
  }
  for (auto& v : img.pixels()) v = std::clamp(v, 0.0F, 255.0F);
  return img;
}

Homography truth_to_reference(const SynthFrame& reference, const SynthFrame& moving) {
  return reference.frame_to_scene.inverse() * moving.frame_to_scene;
}

std::vector<geom::View> truth_views(const SynthTruth& truth, const std::vector<std::string>& kinds) {
  std::vector<geom::View> out;
  for (const auto& cam : truth.cameras) {
    if (std::find(kinds.begin(), kinds.end(), cam.kind) == kinds.end()) continue;
    std::map<int, std::vector<const SynthFrame*>> by_vp;
    for (const auto& f : cam.frames) by_vp[f.viewpoint].push_back(&f);
    for (const auto& [vp, frames] : by_vp) {
      geom::View v;
      v.view_id = cam.camera_id + "-t" + std::to_string(vp);
      v.reference_image_id = frames.front()->image_id;
      v.status = geom::ViewStatus::registered;
      for (const auto* f : frames) v.members.push_back({f->image_id, truth_to_reference(*frames.front(), *f)});
      v.members.front().to_reference = Homography::identity();
      out.push_back(std::move(v));
    }
  }
  return out;
}

SynthTruth make_synthetic_cameras(const std::filesystem::path& out, const SynthOptions& opt) {
  if (opt.n_cameras < 1 || opt.frames < 1 || opt.width < 32 || opt.height < 32) {
    throw std::invalid_argument("make_synthetic_cameras: bad dimensions");
  }
  std::filesystem::create_directories(out);
  const int margin = 40;
  const int pan = static_cast<int>(0.6 * opt.width);
  const int base_w = opt.width + 2 * margin + pan, base_h = opt.height + 2 * margin;

  SynthTruth truth;
  std::vector<std::string> kinds(static_cast<std::size_t>(opt.n_cameras));
  for (int c = 0; c < opt.n_cameras; ++c) {
    const auto& pool = opt.kinds.empty() ? kDefaultKinds : opt.kinds;
    kinds[static_cast<std::size_t>(c)] = pool[static_cast<std::size_t>(c) % pool.size()];
  }
  for (const auto& k : kinds) {
    if (std::find(kDefaultKinds.begin(), kDefaultKinds.end(), k) == kDefaultKinds.end()) {
      throw std::invalid_argument("make_synthetic_cameras: unknown kind " + k);
    }
  }

  // Scene content vectors: one per (scene, viewpoint). A "dup" camera reuses
  // camera 0's scene and therefore its content vector.
  const int dim = opt.embedding_dim;
  auto content_vector = [&](std::uint64_t scene_seed, int viewpoint) {
    auto rng = make_rng(derive_seed(scene_seed, {"content", std::to_string(viewpoint)}));
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::RowVectorXd v(dim);
    for (int d = 0; d < dim; ++d) v(d) = n(rng);
    return v;
  };

  cluster::EmbeddingSet emb;
  emb.vectors.resize(static_cast<Eigen::Index>(opt.n_cameras) * opt.frames, dim);
  std::ostringstream truth_text;
  truth_text << "amos-synth 1\n";

  for (int c = 0; c < opt.n_cameras; ++c) {
    const std::string cam = camera_name(c);
    const std::string kind = kinds[static_cast<std::size_t>(c)];
    const bool dup = kind == "dup";
    const std::uint64_t scene_seed = derive_seed(opt.seed, {"scene", dup ? camera_name(0) : cam});
    const GrayImage base = synthetic_scene(base_w, base_h, scene_seed);
    std::filesystem::create_directories(out / cam);

    SynthCamera sc{cam, kind, {}};
    sc.frames.resize(static_cast<std::size_t>(opt.frames));
    parallel_for(static_cast<std::size_t>(opt.frames), 1, [&](std::size_t fi) {
      const int f = static_cast<int>(fi);
      auto rng = make_rng(derive_seed(opt.seed, {"frame", cam, std::to_string(f)}));
      const int viewpoint = kind == "switch" && f >= opt.switch_at ? 1 : 0;
      const double ox = margin + (viewpoint == 1 ? pan : 0) + (dup ? 12.0 : 0.0);
      const double oy = margin + (dup ? -8.0 : 0.0);
      const double jx = uniform(rng, -opt.jitter_px, opt.jitter_px);
      const double jy = uniform(rng, -opt.jitter_px, opt.jitter_px);
      const double rot = uniform(rng, -0.002, 0.002);
      const Homography h =
          Homography::translation(ox + jx, oy + jy) * rotation_about(rot, opt.width / 2.0, opt.height / 2.0);
      GrayImage frame = warp_image(base, h, opt.width, opt.height).image;
      const Photometric ph = photometric(f, opt.frames, rng);

      gate::DetectionSidecar side;
      side.sky_fraction = std::round(uniform(rng, 0.05, 0.2) * 1000) / 1000;
      if (kind == "dynamic") {
        for (int car = 0; car < 3; ++car) {
          const int cw = 90, ch = 45;
          const int x0 = static_cast<int>(uniform(rng, 0, opt.width - cw)), y0 = static_cast<int>(uniform(rng, opt.height / 2, opt.height - ch));
          fill_rect(frame, x0, y0, cw, ch, static_cast<float>(uniform(rng, 30, 220)));
          side.detections.push_back({"car", 0.9, double(x0), double(y0), double(x0 + cw), double(y0 + ch)});
        }
      } else if (kind == "moving") {
        const int size = std::max(8, std::min(opt.width, opt.height) * 7 / 36);  // 140 px at 720
        const double speed = static_cast<double>(opt.width + size) / std::max(opt.frames, 1);
        const int x0 = static_cast<int>(-size + speed * f), y0 = opt.height / 3;
        fill_rect(frame, x0, y0, size, size, 240.0F);
      }
      if (kind == "black") {
        for (auto& v : frame.pixels()) v = 3.0F;
      } else {
        apply_photometric(frame, ph, opt.sensor_noise, rng);
      }

      const std::string fname = frame_name(f);
      save_png(out / cam / (fname + ".png"), frame);
      write_file_atomic(out / cam / (fname + ".det"), gate::format_sidecar(side));
      sc.frames[fi] = {cam + "/" + fname, viewpoint, h};

      std::normal_distribution<double> n(0.0, 0.08);
      Eigen::RowVectorXd e = content_vector(scene_seed, viewpoint);
      for (int d = 0; d < dim; ++d) e(d) += n(rng) + 0.2 * (ph.gain - 0.88) * (d % 2 == 0 ? 1.0 : -1.0);
      emb.vectors.row(static_cast<Eigen::Index>(c) * opt.frames + f) = e;
    });
    for (const auto& fr : sc.frames) emb.image_ids.push_back(fr.image_id);

    truth_text << "camera " << cam << ' ' << kind << ' ' << opt.frames << '\n';
    for (const auto& fr : sc.frames) {
      truth_text << "frame " << fr.image_id << ' ' << fr.viewpoint;
      char buf[32];
      for (double v : fr.frame_to_scene.row_major()) {
        std::snprintf(buf, sizeof buf, " %.17g", v);
        truth_text << buf;
      }
      truth_text << '\n';
    }
    truth.cameras.push_back(std::move(sc));
  }
  cluster::save_embeddings(out / "embeddings.amem", emb);
  write_file_atomic(out / "truth.txt", truth_text.str());
  return truth;
}

SynthTruth read_truth(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "amos-synth 1") throw std::runtime_error("truth file: bad header");
  SynthTruth t;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "camera") {
      SynthCamera c;
      int n = 0;
      ls >> c.camera_id >> c.kind >> n;
      t.cameras.push_back(std::move(c));
    } else if (tag == "frame") {
      if (t.cameras.empty()) throw std::runtime_error("truth file: frame before camera");
      SynthFrame f;
      std::array<double, 9> h{};
      ls >> f.image_id >> f.viewpoint;
      for (auto& v : h) ls >> v;
      if (!ls) throw std::runtime_error("truth file: bad frame line: " + line);
      f.frame_to_scene = Homography::from_row_major(h);
      t.cameras.back().frames.push_back(std::move(f));
    }
  }
  return t;
}

}  // namespace amos::pipeline
