#include "amos/pipeline/review.hpp"

#include "amos/cluster/embeddings.hpp"
#include "amos/common/parallel.hpp"
#include "amos/imgcore/warp.hpp"
#include "amos/pipeline/hashing.hpp"
#include "amos/pipeline/imageio.hpp"
#include "amos/pipeline/stages.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <thread>

namespace amos::pipeline {

namespace fs = std::filesystem;

std::vector<std::string> ViewFlags::labels() const {
  std::vector<std::string> out;
  if (dynamic) out.emplace_back("dynamic");
  if (exposure) out.emplace_back("exposure");
  if (duplicate) out.push_back("duplicate:" + duplicate_of);
  return out;
}

namespace {

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
};

Moments valid_moments(const WarpResult& w) {
  double s = 0, s2 = 0;
  std::size_t n = 0;
  const auto px = w.image.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (!w.mask.valid[i]) continue;
    s += px[i];
    s2 += static_cast<double>(px[i]) * px[i];
    ++n;
  }
  if (n == 0) return {};
  const double m = s / static_cast<double>(n);
  return {m, std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - m * m))};
}

ViewFlags measure_view(const StoredView& sv, const std::vector<GrayImage>& images, const PipelineConfig& cfg) {
  ViewFlags f;
  f.view_id = sv.view.view_id;
  const auto& ref = images[0];
  const std::size_t npx = ref.size();
  std::vector<double> sum(npx, 0.0), sum2(npx, 0.0);
  std::vector<int> count(npx, 0);
  std::vector<double> means;
  Moments ref_m;
  for (std::size_t k = 0; k < images.size(); ++k) {
    const auto w = warp_image(images[k], sv.view.members[k].to_reference.inverse(), ref.width(), ref.height());
    const Moments m = valid_moments(w);
    if (k == 0) ref_m = m;
    means.push_back(m.mean);
    // Exposure changes are not motion: map each frame onto the reference's
    // mean and contrast before looking at per-pixel variation.
    const double g = m.sd > 1e-6 ? ref_m.sd / m.sd : 1.0;
    const auto px = w.image.pixels();
    for (std::size_t i = 0; i < npx; ++i) {
      if (!w.mask.valid[i]) continue;
      const double v = (px[i] - m.mean) * g + ref_m.mean;
      sum[i] += v;
      sum2[i] += v * v;
      ++count[i];
    }
  }
  std::size_t covered = 0, moving = 0;
  for (std::size_t i = 0; i < npx; ++i) {
    if (count[i] < 2) continue;
    ++covered;
    const double m = sum[i] / count[i];
    const double var = std::max(0.0, sum2[i] / count[i] - m * m);
    if (std::sqrt(var) > cfg.flag_dynamic_std) ++moving;
  }
  f.dynamic_fraction = covered ? static_cast<double>(moving) / static_cast<double>(covered) : 0.0;
  double mm = 0;
  for (double m : means) mm += m;
  mm /= static_cast<double>(means.size());
  double mv = 0;
  for (double m : means) mv += (m - mm) * (m - mm);
  f.exposure_std = std::sqrt(mv / static_cast<double>(means.size()));
  f.dynamic = f.dynamic_fraction > cfg.flag_dynamic_fraction;
  f.exposure = f.exposure_std > cfg.flag_exposure_std;
  return f;
}

}  // namespace

std::vector<ViewFlags> autoflag_views(const PipelineConfig& cfg) {
  const fs::path out = cfg.output_root;
  Manifest manifest(manifest_path(cfg));
  if (!manifest.latest_stage("register")) throw StageError("autoflag requires a completed 'register' stage");
  const auto index = scan_inputs(cfg.input_root);
  std::vector<StoredView> views;
  for (auto& v : load_views(out / "register/views.json"))
    if (v.view.status == geom::ViewStatus::registered) views.push_back(std::move(v));
  std::sort(views.begin(), views.end(), [](const auto& a, const auto& b) { return a.view.view_id < b.view.view_id; });

  std::vector<ViewFlags> flags;
  for (const auto& v : views) flags.push_back(measure_view(v, load_view_images(v.view, index, cfg.jobs), cfg));

  const fs::path emb_path = fs::path(cfg.input_root) / "embeddings.amem";
  if (fs::exists(emb_path)) {
    const auto emb = cluster::load_embeddings(emb_path);
    std::map<std::string, Eigen::Index> row;
    for (std::size_t i = 0; i < emb.image_ids.size(); ++i) row.emplace(emb.image_ids[i], static_cast<Eigen::Index>(i));
    std::vector<Eigen::RowVectorXd> centre;
    for (const auto& v : views) {
      Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(emb.dim());
      for (const auto& m : v.view.members)
        if (const auto it = row.find(m.image_id); it != row.end()) c += emb.vectors.row(it->second);
      const double n = c.norm();
      centre.push_back(n > 0 ? Eigen::RowVectorXd(c / n) : c);
    }
    const auto live = manifest.live_decisions();
    for (std::size_t i = 0; i < views.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        const auto d = live.find(views[j].view.view_id);
        if (d != live.end() && d->second.verdict == "rejected") continue;
        const double cosv = centre[i].dot(centre[j]);
        if (cosv > cfg.flag_duplicate_cos && cosv > flags[i].duplicate_cos) {
          flags[i].duplicate = true;
          flags[i].duplicate_cos = cosv;
          flags[i].duplicate_of = views[j].view.view_id;
        }
      }
    }
  }
  return flags;
}

std::vector<ViewFlags> run_autoflag(const PipelineConfig& cfg) {
  const auto flags = autoflag_views(cfg);
  json views = json::object();
  json items = json::array();
  for (const auto& f : flags) {
    views[f.view_id] = {{"labels", f.labels()},
                        {"dynamic_fraction", f.dynamic_fraction},
                        {"exposure_std", f.exposure_std},
                        {"duplicate_of", f.duplicate_of},
                        {"duplicate_cos", f.duplicate_cos}};
    items.push_back({{"id", f.view_id}, {"labels", f.labels()}});
    std::string text;
    for (const auto& l : f.labels()) text += (text.empty() ? "" : ", ") + l;
    spdlog::info("autoflag {}: {}", f.view_id, text.empty() ? "no flags" : text);
  }
  const fs::path out = cfg.output_root;
  write_json(out / "review/flags.json", {{"views", views}});
  Manifest manifest(manifest_path(cfg));
  manifest.append({{"kind", "autoflag"},
                   {"outputs", std::vector<ArtifactRef>{{"review/flags.json", sha256_tree(out / "review/flags.json")}}},
                   {"items", items},
                   {"timestamp", utc_timestamp()}});
  return flags;
}

ReviewService::ReviewService(const PipelineConfig& cfg)
    : cfg_(cfg), index_(scan_inputs(cfg.input_root)), manifest_(manifest_path(cfg)) {
  if (!manifest_.latest_stage("register")) throw StageError("review requires a completed 'register' stage");
  const fs::path out = cfg.output_root;
  views_ = load_views(out / "register/views.json");
  std::sort(views_.begin(), views_.end(), [](const auto& a, const auto& b) { return a.view.view_id < b.view.view_id; });
  if (fs::exists(out / "review/flags.json")) {
    const json doc = read_json(out / "review/flags.json");
    for (const auto& [id, f] : doc.at("views").items()) {
      flags_[id] = f.at("labels").get<std::vector<std::string>>();
    }
  }
}

const StoredView* ReviewService::find(const std::string& view_id) const {
  for (const auto& v : views_)
    if (v.view.view_id == view_id) return &v;
  return nullptr;
}

std::shared_ptr<const ReviewService::Loaded> ReviewService::load(const StoredView& v) const {
  {
    std::lock_guard lock(cache_mutex_);
    if (cache_ && cache_->view_id == v.view.view_id) return cache_;
  }
  auto loaded = std::make_shared<Loaded>();
  loaded->view_id = v.view.view_id;
  const auto images = load_view_images(v.view, index_, cfg_.jobs);
  loaded->registered.resize(images.size());
  parallel_for(images.size(), cfg_.jobs, [&](std::size_t k) {
    loaded->registered[k] =
        warp_image(images[k], v.view.members[k].to_reference.inverse(), images[0].width(), images[0].height()).image;
  });
  std::lock_guard lock(cache_mutex_);
  cache_ = loaded;
  return loaded;
}

namespace {

HttpReply error_reply(int status, const std::string& message) { return {status, json{{"error", message}}.dump(), "application/json"}; }

HttpReply png_reply(const GrayImage& img) {
  const auto buf = encode_png(img);
  return {200, std::string(buf.begin(), buf.end()), "image/png"};
}

}  // namespace

HttpReply ReviewService::list_views() const {
  const auto live = manifest_.live_decisions();
  json out = json::array();
  for (const auto& v : views_) {
    const auto& id = v.view.view_id;
    json decision = nullptr;
    std::string status = geom::to_string(v.view.status);
    if (const auto it = live.find(id); it != live.end()) {
      decision = {{"verdict", it->second.verdict}, {"reason", it->second.reason}, {"reviewer", it->second.reviewer},
                  {"timestamp", it->second.timestamp}};
      if (v.view.status == geom::ViewStatus::registered) status = it->second.verdict;
    }
    const auto fl = flags_.find(id);
    out.push_back({{"view_id", id},
                   {"camera_id", v.camera_id},
                   {"frames", v.view.size()},
                   {"status", status},
                   {"registration_failure", v.view.failure_reason},
                   {"decision", decision},
                   {"flags", fl == flags_.end() ? json::array() : json(fl->second)},
                   {"thumbnail", "/api/views/" + id + "/frames/0"}});
  }
  return {200, out.dump(), "application/json"};
}

HttpReply ReviewService::frame(const std::string& view_id, int k) const {
  const auto* v = find(view_id);
  if (!v) return error_reply(404, "unknown view " + view_id);
  if (k < 0 || static_cast<std::size_t>(k) >= v->view.size()) return error_reply(404, "frame index out of range");
  return png_reply(load(*v)->registered[static_cast<std::size_t>(k)]);
}

HttpReply ReviewService::overlay(const std::string& view_id, int k) const {
  const auto* v = find(view_id);
  if (!v) return error_reply(404, "unknown view " + view_id);
  if (k < 0 || static_cast<std::size_t>(k) >= v->view.size()) return error_reply(404, "frame index out of range");
  const auto loaded = load(*v);
  const auto& ref = loaded->registered[0];
  const auto& img = loaded->registered[static_cast<std::size_t>(k)];
  GrayImage diff(ref.width(), ref.height());
  for (std::size_t i = 0; i < diff.size(); ++i) diff.pixels()[i] = std::abs(img.pixels()[i] - ref.pixels()[i]);
  return png_reply(diff);
}

HttpReply ReviewService::decide(const std::string& view_id, const std::string& body) {
  const auto* v = find(view_id);
  if (!v) return error_reply(404, "unknown view " + view_id);
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error&) {
    return error_reply(400, "body is not valid JSON");
  }
  if (!j.is_object() || !j.contains("verdict") || !j["verdict"].is_string()) return error_reply(400, "verdict is required");
  const std::string verdict = j["verdict"];
  if (verdict != "accepted" && verdict != "rejected") return error_reply(400, "verdict must be 'accepted' or 'rejected'");
  for (const char* key : {"reason", "reviewer"}) {
    if (j.contains(key) && !j[key].is_string()) return error_reply(400, std::string(key) + " must be a string");
  }
  if (v->view.status != geom::ViewStatus::registered) return error_reply(409, "view failed registration and cannot be reviewed");
  PruneDecision d{view_id, verdict, j.value("reason", ""), j.value("reviewer", ""), {}};
  manifest_.record_decision(d);
  const auto live = manifest_.live_decisions().at(view_id);
  spdlog::info("decision {} -> {} by '{}'", view_id, verdict, live.reviewer);
  return {200,
          json{{"view_id", view_id}, {"verdict", live.verdict}, {"reason", live.reason}, {"reviewer", live.reviewer},
               {"timestamp", live.timestamp}}
              .dump(),
          "application/json"};
}

struct ReviewServer::Impl {
  ReviewService service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(const PipelineConfig& cfg) : service(cfg) {}
};

ReviewServer::ReviewServer(const PipelineConfig& cfg) : impl_(std::make_unique<Impl>(cfg)) {
  auto& s = impl_->server;
  auto& svc = impl_->service;
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  s.Get("/api/views", [&svc, send](const httplib::Request&, httplib::Response& res) { send(res, svc.list_views()); });
  s.Get(R"(/api/views/([^/]+)/frames/(\d+))", [&svc, send](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.frame(req.matches[1], std::stoi(req.matches[2])));
  });
  s.Get(R"(/api/views/([^/]+)/overlay/(\d+))", [&svc, send](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.overlay(req.matches[1], std::stoi(req.matches[2])));
  });
  s.Post(R"(/api/views/([^/]+)/decision)", [&svc, send](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.decide(req.matches[1], req.body));
  });
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    spdlog::error("review request failed: {}", msg);
    res.status = 500;
    res.set_content(json{{"error", msg}}.dump(), "application/json");
  });
}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::start(const std::string& host, int port) {
  auto& s = impl_->server;
  const int bound = port == 0 ? s.bind_to_any_port(host) : (s.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([&s] { s.listen_after_bind(); });
  spdlog::info("review service on http://{}:{}", host, bound);
  return bound;
}

void ReviewServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  wait();
}

void ReviewServer::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace amos::pipeline
