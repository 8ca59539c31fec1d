#include "amos/pipeline/stages.hpp"

#include "amos/cluster/embeddings.hpp"
#include "amos/cluster/kmeans.hpp"
#include "amos/evalbench/batch_report.hpp"
#include "amos/evalbench/runner.hpp"
#include "amos/gate/gate.hpp"
#include "amos/geom/registration.hpp"
#include "amos/geom/views.hpp"
#include "amos/pipeline/artifacts.hpp"
#include "amos/pipeline/hashing.hpp"
#include "amos/pipeline/imageio.hpp"
#include "amos/sampler/dataset.hpp"
#include "amos/sampler/patches.hpp"
#include "amos/sampler/response.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

namespace amos::pipeline {

namespace fs = std::filesystem;

namespace {

struct StageRun {
  json items = json::array();
  std::vector<std::string> outputs;  // relative to the output root
};

struct Context {
  const PipelineConfig& cfg;
  fs::path out;
  fs::path in;
  Manifest& manifest;
};

std::vector<ArtifactRef> hash_outputs(const fs::path& root, const std::vector<std::string>& rel) {
  std::vector<ArtifactRef> out;
  for (const auto& p : rel) out.push_back({p, sha256_tree(root / p)});
  return out;
}

std::vector<ArtifactRef> camera_inputs(const InputIndex& idx) {
  std::vector<ArtifactRef> out;
  for (const auto& [cam, _] : idx.camera_images) out.push_back({"input:" + cam, sha256_tree(idx.root / cam)});
  return out;
}

std::vector<ArtifactRef> stage_outputs(const Manifest& m, const fs::path& out, const std::string& stage) {
  const auto rec = m.latest_stage(stage);
  if (!rec) throw StageError("stage '" + stage + "' has not completed");
  std::vector<std::string> rel;
  for (const auto& a : rec->at("outputs").get<std::vector<ArtifactRef>>()) rel.push_back(a.path);
  try {
    return hash_outputs(out, rel);
  } catch (const std::exception& e) {
    throw StageError("outputs of stage '" + stage + "' are missing; rerun it (" + e.what() + ")");
  }
}

json config_echo(const PipelineConfig& cfg) {
  json j = json::object();
  for (const auto& [k, v] : to_pairs(cfg))
    if (!is_runtime_key(k)) j[k] = v;
  return j;
}

std::vector<std::string> accepted_view_ids(const Manifest& m, const std::vector<StoredView>& registered) {
  const auto live = m.live_decisions();
  std::vector<std::string> ids;
  for (const auto& v : registered) {
    if (v.view.status != geom::ViewStatus::registered) continue;
    const auto it = live.find(v.view.view_id);
    if (it != live.end() && it->second.verdict == "accepted") ids.push_back(v.view.view_id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---- gate ----

StageRun run_gate(const Context& ctx, const InputIndex& idx) {
  std::vector<gate::CameraEntry> cams;
  for (const auto& [cam, ids] : idx.camera_images) cams.push_back({cam, ids});
  const auto load = [&](const std::string&, const std::string& image_id) {
    gate::LoadedImage li;
    const auto& path = idx.path_of(image_id);
    li.image = load_gray(path);
    const auto sc = sidecar_path(path);
    if (fs::exists(sc)) {
      try {
        li.sidecar = gate::parse_sidecar(read_file(sc), image_id);
      } catch (const std::exception& e) {
        spdlog::warn("ignoring unreadable sidecar {}: {}", sc.string(), e.what());
      }
    }
    return li;
  };
  const auto decisions = gate::select_cameras(cams, ctx.cfg.gate_config(), ctx.cfg.seed, load, ctx.cfg.jobs);

  StageRun run;
  json cameras = json::array();
  for (const auto& d : decisions) {
    json reports = json::array();
    for (const auto& r : d.reports) {
      reports.push_back({{"image_id", r.image_id},
                         {"pass", r.pass},
                         {"filters", r.f},
                         {"sky_fraction", r.sky_fraction},
                         {"lap_var", r.lap_var},
                         {"mean", r.mean},
                         {"sidecar_missing", r.sidecar_missing},
                         {"corrupted", r.corrupted}});
    }
    cameras.push_back({{"camera_id", d.camera_id}, {"kept", d.kept}, {"passing", d.passing},
                       {"failure_counts", d.failure_counts}, {"reports", reports}});
    std::string reason = std::to_string(d.passing) + "/" + std::to_string(d.reports.size()) + " sampled images pass";
    for (int f = 0; f < gate::kFilterCount; ++f) {
      if (d.failure_counts[static_cast<std::size_t>(f)] > 0) {
        reason += "; f" + std::to_string(f + 1) + " failed " + std::to_string(d.failure_counts[static_cast<std::size_t>(f)]) + "x";
      }
    }
    run.items.push_back({{"id", d.camera_id}, {"kept", d.kept}, {"reason", reason}});
    spdlog::info("gate {}: {} ({})", d.camera_id, d.kept ? "kept" : "dropped", reason);
  }
  write_json(ctx.out / "gate/cameras.json", {{"cameras", cameras}});
  run.outputs = {"gate/cameras.json"};
  return run;
}

std::vector<std::string> kept_cameras(const fs::path& out) {
  std::vector<std::string> ids;
  const json doc = read_json(out / "gate/cameras.json");
  for (const auto& c : doc.at("cameras"))
    if (c.at("kept").get<bool>()) ids.push_back(c.at("camera_id"));
  return ids;
}

// ---- cluster ----

StageRun run_cluster(const Context& ctx, const InputIndex& idx) {
  const auto emb_all = cluster::load_embeddings(ctx.in / "embeddings.amem");
  StageRun run;
  json cams = json::object();
  for (const auto& cam : kept_cameras(ctx.out)) {
    const auto& ids = idx.camera_images.at(cam);
    auto emb = emb_all.subset(ids);
    if (ctx.cfg.normalize_embeddings) emb.l2_normalize_rows();
    const int k = std::min<int>(ctx.cfg.k, static_cast<int>(ids.size()));
    if (k < ctx.cfg.k) spdlog::info("cluster {}: only {} images, K reduced from {} to {}", cam, ids.size(), ctx.cfg.k, k);
    const auto c = cluster::kmeans(emb, k, derive_seed(ctx.cfg.seed, {"cluster", cam}));
    auto reps = cluster::select_representatives(emb, c);
    std::sort(reps.begin(), reps.end());
    cams[cam] = {{"k", k}, {"n_images", ids.size()}, {"cost", c.cost}, {"iterations", c.iterations}, {"representatives", reps}};
    run.items.push_back({{"id", cam}, {"k", k}, {"representatives", reps.size()}});
  }
  write_json(ctx.out / "cluster/representatives.json", {{"cameras", cams}});
  run.outputs = {"cluster/representatives.json"};
  return run;
}

// ---- views ----

StageRun run_views(const Context& ctx, const InputIndex& idx) {
  const auto reps = read_json(ctx.out / "cluster/representatives.json").at("cameras");
  StageRun run;
  json views = json::array();
  json cams = json::array();
  for (const auto& [cam, entry] : reps.items()) {
    const auto ids = entry.at("representatives").get<std::vector<std::string>>();
    geom::View all{"", ids.front(), {}, geom::ViewStatus::raw, {}};
    for (const auto& id : ids) all.members.push_back({id, Homography::identity()});
    const auto images = load_view_images(all, idx, ctx.cfg.jobs);
    const auto found = geom::cluster_views(ids, std::span<const GrayImage>(images), ctx.cfg.cluster_rule(),
                                           ctx.cfg.matcher_config(), derive_seed(ctx.cfg.seed, {"views", cam}),
                                           ctx.cfg.jobs, cam + "-v");
    json sizes = json::array();
    for (const auto& v : found) sizes.push_back({{"view_id", v.view_id}, {"size", v.size()}});
    const auto dominant = geom::keep_dominant_view(found, ctx.cfg.view_min, ctx.cfg.view_cap,
                                                   derive_seed(ctx.cfg.seed, {"dominant", cam}));
    std::string reason;
    if (dominant) {
      views.push_back(view_to_json({cam, *dominant}));
      reason = std::to_string(found.size()) + " views; kept " + dominant->view_id;
    } else {
      reason = std::to_string(found.size()) + " views; none larger than " + std::to_string(ctx.cfg.view_min);
    }
    cams.push_back({{"camera_id", cam}, {"views", sizes}, {"dominant", dominant ? json(dominant->view_id) : json(nullptr)}});
    run.items.push_back({{"id", cam}, {"kept", dominant.has_value()}, {"reason", reason}});
    spdlog::info("views {}: {}", cam, reason);
  }
  write_json(ctx.out / "views/views.json", {{"views", views}, {"cameras", cams}});
  run.outputs = {"views/views.json"};
  return run;
}

// ---- register ----

StageRun run_register(const Context& ctx, const InputIndex& idx) {
  StageRun run;
  json views = json::array();
  for (const auto& sv : load_views(ctx.out / "views/views.json")) {
    const auto images = load_view_images(sv.view, idx, ctx.cfg.jobs);
    const auto res = geom::verify_view_registration(sv.view, images, ctx.cfg.refine_options(), ctx.cfg.jobs);
    json j = view_to_json({sv.camera_id, res.view});
    json ncc = json::array();
    double worst = 1.0;
    for (const auto& m : res.members) {
      ncc.push_back(m.ncc);
      worst = std::min(worst, m.ncc);
    }
    j["ncc"] = ncc;
    views.push_back(j);
    run.items.push_back({{"id", sv.view.view_id}, {"kept", res.kept}, {"reason", res.kept ? "registered" : res.reason},
                         {"min_ncc", worst}});
    spdlog::info("register {}: {}", sv.view.view_id, res.kept ? "registered" : res.reason);
  }
  write_json(ctx.out / "register/views.json", {{"views", views}});
  run.outputs = {"register/views.json"};
  return run;
}

// ---- sample ----

StageRun run_sample(const Context& ctx, const InputIndex& idx, const std::vector<std::string>& accepted) {
  std::map<std::string, StoredView> by_id;
  for (auto& v : load_views(ctx.out / "register/views.json")) by_id.emplace(v.view.view_id, std::move(v));

  const int n_total = ctx.cfg.n_patch_sets;
  const int nv = static_cast<int>(accepted.size());
  sampler::PatchFile file;
  file.set_size = 0;
  json provenance = json::array();
  StageRun run;
  std::uint64_t next_id = 0;
  for (int vi = 0; vi < nv; ++vi) {
    const auto& sv = by_id.at(accepted[static_cast<std::size_t>(vi)]);
    const auto& view = sv.view;
    if (file.set_size == 0) file.set_size = static_cast<std::uint32_t>(view.size());
    if (view.size() != file.set_size) {
      throw StageError("accepted views differ in size (" + std::to_string(view.size()) + " vs " +
                       std::to_string(file.set_size) + "); patch sets must have equal size");
    }
    const int n = n_total / nv + (vi < n_total % nv ? 1 : 0);
    const auto images = load_view_images(view, idx, ctx.cfg.jobs);
    const auto warped = sampler::warp_to_reference(view, images);
    const auto mask = sampler::build_probability_mask(warped, ctx.cfg.parsed_mask_mode(), ctx.cfg.mask_sigma);
    const auto geometry = sampler::member_geometry(view, images);
    const auto specs = sampler::sample_patch_specs(mask, n, ctx.cfg.sampling_ranges(), geometry,
                                                   derive_seed(ctx.cfg.seed, {"sample", view.view_id}));
    std::vector<sampler::PatchRecord> records(specs.size());
    parallel_for(specs.size(), ctx.cfg.jobs, [&](std::size_t k) {
      records[k] = sampler::to_record(sampler::extract_patch_set(view, images, specs[k], 96, next_id + k),
                                      static_cast<std::uint32_t>(vi));
    });
    next_id += specs.size();
    for (auto& r : records) file.records.push_back(std::move(r));
    json members = json::array();
    for (const auto& m : view.members) members.push_back(m.image_id);
    provenance.push_back({{"view_id", view.view_id}, {"camera_id", sv.camera_id}, {"member_ids", members}});
    run.items.push_back({{"id", view.view_id}, {"patch_sets", specs.size()}, {"uniform_mask", mask.uniform_fallback}});
    spdlog::info("sample {}: {} patch sets", view.view_id, specs.size());
  }
  fs::create_directories(ctx.out / "sample");
  sampler::save_patch_file(ctx.out / "sample/patches.amps", file);
  write_json(ctx.out / "sample/views.json", {{"views", provenance}});
  run.outputs = {"sample/patches.amps", "sample/views.json"};
  return run;
}

// ---- export ----

StageRun run_export(const Context& ctx) {
  const auto all = sampler::load_patch_file(ctx.out / "sample/patches.amps");
  std::vector<sampler::ViewProvenance> views;
  std::vector<std::string> ids;
  const json provenance = read_json(ctx.out / "sample/views.json");
  for (const auto& v : provenance.at("views")) {
    views.push_back({v.at("view_id"), v.at("camera_id"), v.at("member_ids").get<std::vector<std::string>>()});
    ids.push_back(v.at("view_id"));
  }
  const auto splits = sampler::assign_splits(ids, ctx.cfg.test_fraction, ctx.cfg.seed);
  std::vector<std::pair<std::string, std::string>> params;
  for (const auto& [k, v] : to_pairs(ctx.cfg))
    if (!is_runtime_key(k)) params.emplace_back(k, v);
  const auto res = sampler::export_dataset(all, views, splits, params, ctx.out / "dataset");
  StageRun run;
  for (const auto& [id, s] : splits) run.items.push_back({{"id", id}, {"split", sampler::to_string(s)}});
  run.items.push_back({{"id", "totals"}, {"train_sets", res.train_sets}, {"test_sets", res.test_sets}});
  spdlog::info("export: {} train / {} test patch sets", res.train_sets, res.test_sets);
  run.outputs = {"dataset/train.amps", "dataset/test.amps", "dataset/manifest.txt"};
  return run;
}

sampler::ExportManifest load_export_manifest(const fs::path& out) {
  std::ifstream in(out / "dataset/manifest.txt");
  if (!in) throw StageError("dataset manifest missing");
  return sampler::parse_export_manifest(in);
}

// ---- eval ----

StageRun run_eval(const Context& ctx) {
  const auto test = sampler::load_patch_file(ctx.out / "dataset/test.amps");
  const auto em = load_export_manifest(ctx.out);
  std::vector<std::string> names;
  for (const auto& v : em.views) names.push_back(v.view_id);
  eval::DescriptorTable table;
  std::string descriptor = "baseline";
  if (!ctx.cfg.eval_descriptors.empty()) {
    table = eval::table_from_embeddings(test, cluster::load_embeddings(ctx.cfg.eval_descriptors));
    descriptor = "external";
  } else {
    table = eval::describe_file(test, eval::DescriptorFn(eval::baseline_descriptor), ctx.cfg.jobs);
  }
  auto rep = eval::run_matching_eval(test, table, names, ctx.cfg.jobs);
  rep.config = {{"descriptor", descriptor}, {"test_sets", std::to_string(test.records.size())},
                {"skipped_views", std::to_string(rep.skipped_views)}};
  write_file_atomic(ctx.out / "eval/report.txt", eval::format_report(rep));
  StageRun run;
  run.items.push_back({{"id", "mAP"}, {"value", rep.map}, {"pairs", rep.pairs.size()}, {"descriptor", descriptor}});
  spdlog::info("eval: mAP {:.4f} over {} image pairs", rep.map, rep.pairs.size());
  run.outputs = {"eval/report.txt"};
  return run;
}

// ---- dereg ----

StageRun run_dereg(const Context& ctx, const InputIndex& idx) {
  const auto test = sampler::load_patch_file(ctx.out / "dataset/test.amps");
  const auto em = load_export_manifest(ctx.out);
  std::map<std::string, StoredView> registered;
  for (auto& v : load_views(ctx.out / "register/views.json")) registered.emplace(v.view.view_id, std::move(v));
  std::map<std::uint32_t, eval::DeregSource> by_ordinal;
  for (const auto& r : test.records) {
    auto it = by_ordinal.find(r.view_ordinal);
    if (it == by_ordinal.end()) {
      const auto& view = registered.at(em.views.at(r.view_ordinal).view_id).view;
      it = by_ordinal.emplace(r.view_ordinal, eval::DeregSource{view, load_view_images(view, idx, ctx.cfg.jobs), {}, {}}).first;
    }
    it->second.set_ids.push_back(r.set_id);
    it->second.specs.push_back(r.spec);
  }
  std::vector<eval::DeregSource> sources;
  for (auto& [_, s] : by_ordinal) sources.push_back(std::move(s));
  const auto shifts = ctx.cfg.parsed_dereg_shifts();
  const auto points = eval::deregistration_experiment(sources, shifts, eval::DescriptorFn(eval::baseline_descriptor),
                                                      derive_seed(ctx.cfg.seed, {"dereg"}), ctx.cfg.jobs);
  std::ostringstream report;
  report.precision(10);
  report << "# shift mAP pairs dropped_specs\n";
  StageRun run;
  for (const auto& p : points) {
    report << p.shift << ' ' << p.map << ' ' << p.pairs << ' ' << p.dropped_specs << '\n';
    run.items.push_back({{"id", "shift " + std::to_string(p.shift)}, {"mAP", p.map}, {"dropped", p.dropped_specs}});
    spdlog::info("dereg: shift {} px -> mAP {:.4f}", p.shift, p.map);
  }
  write_file_atomic(ctx.out / "dereg/report.txt", report.str());
  run.outputs = {"dereg/report.txt"};
  return run;
}

bool uses_images(const std::string& stage) {
  return stage == "gate" || stage == "views" || stage == "register" || stage == "sample" || stage == "dereg";
}

}  // namespace

StageOutcome run_stage(const std::string& stage, const PipelineConfig& cfg, bool force) {
  if (std::find(kStages.begin(), kStages.end(), stage) == kStages.end()) throw StageError("unknown stage: " + stage);
  cfg.validate();
  const fs::path out = cfg.output_root;
  const fs::path in = cfg.input_root;
  Manifest manifest(manifest_path(cfg));
  Context ctx{cfg, out, in, manifest};

  std::vector<ArtifactRef> inputs;
  const std::string pred = predecessor(stage);
  if (!pred.empty()) {
    if (!manifest.latest_stage(pred)) throw StageError("stage '" + stage + "' requires a completed '" + pred + "' stage");
    inputs = stage_outputs(manifest, out, pred);
  }
  if (stage == "dereg") {
    const auto reg = stage_outputs(manifest, out, "register");
    inputs.insert(inputs.end(), reg.begin(), reg.end());
  }
  std::optional<InputIndex> idx;
  if (uses_images(stage) || stage == "cluster") idx = scan_inputs(in);
  if (uses_images(stage)) {
    const auto cams = camera_inputs(*idx);
    inputs.insert(inputs.end(), cams.begin(), cams.end());
  }
  if (stage == "cluster") inputs.push_back({"input:embeddings.amem", sha256_file(in / "embeddings.amem")});

  std::string digest;
  std::vector<std::string> accepted;
  if (stage == "sample") {
    accepted = accepted_view_ids(manifest, load_views(out / "register/views.json"));
    if (accepted.empty()) throw StageError("sample: no accepted views; record review decisions first");
    std::string text;
    for (const auto& id : accepted) text += id + "\n";
    digest = sha256_hex(text);
  }
  if (stage == "eval" && !cfg.eval_descriptors.empty()) digest = sha256_file(cfg.eval_descriptors);

  const std::string cfg_hash = stage_config_hash(cfg, stage);
  if (const auto prev = manifest.latest_stage(stage)) {
    const bool same_cfg = prev->at("config_hash") == cfg_hash;
    if (!same_cfg && !force) {
      throw StageError("stage '" + stage + "': configuration changed since the last run (use --force to rerun)");
    }
    if (same_cfg && !force && prev->at("inputs").get<std::vector<ArtifactRef>>() == inputs &&
        prev->value("digest", "") == digest) {
      bool intact = true;
      for (const auto& a : prev->at("outputs").get<std::vector<ArtifactRef>>()) {
        if (!fs::exists(out / a.path) || sha256_tree(out / a.path) != a.sha256) intact = false;
      }
      if (intact) {
        spdlog::info("{}: up to date, nothing to do", stage);
        return {stage, true, *prev};
      }
    }
  }

  const std::string started = utc_timestamp();
  StageRun run;
  if (stage == "gate") run = run_gate(ctx, *idx);
  else if (stage == "cluster") run = run_cluster(ctx, *idx);
  else if (stage == "views") run = run_views(ctx, *idx);
  else if (stage == "register") run = run_register(ctx, *idx);
  else if (stage == "sample") run = run_sample(ctx, *idx, accepted);
  else if (stage == "export") run = run_export(ctx);
  else if (stage == "eval") run = run_eval(ctx);
  else run = run_dereg(ctx, *idx);

  json rec{{"kind", "stage"},
           {"stage", stage},
           {"config_hash", cfg_hash},
           {"config", config_echo(cfg)},
           {"inputs", inputs},
           {"digest", digest},
           {"outputs", hash_outputs(out, run.outputs)},
           {"items", run.items},
           {"started", started},
           {"finished", utc_timestamp()}};
  manifest.append(rec);
  return {stage, false, rec};
}

std::string run_batch_report(const PipelineConfig& cfg, const std::vector<int>& views_per_batch, int batch_size, int batches,
                             const fs::path& report) {
  const fs::path out = cfg.output_root;
  if (!Manifest(manifest_path(cfg)).latest_stage("export")) throw StageError("batch report requires a completed 'export' stage");
  const auto train = sampler::load_patch_file(out / "dataset/train.amps");
  const auto em = load_export_manifest(out);
  std::vector<sampler::PatchSet> sets;
  sets.reserve(train.records.size());
  for (const auto& r : train.records) sets.push_back(sampler::to_patch_set(train, r, em.views.at(r.view_ordinal).view_id));
  const auto rep = eval::batch_composition_experiment(sets, views_per_batch, batch_size, batches,
                                                      eval::DescriptorFn(eval::baseline_descriptor),
                                                      derive_seed(cfg.seed, {"batch-report"}), cfg.jobs);
  const std::string text = eval::format_batch_report(rep);
  write_file_atomic(report.empty() ? out / "reports/batch_composition.txt" : report, text);
  return text;
}

int decide_all(const PipelineConfig& cfg, const std::string& verdict, const std::string& reviewer, const std::string& reason) {
  Manifest manifest(manifest_path(cfg));
  if (!manifest.latest_stage("register")) throw StageError("decisions require a completed 'register' stage");
  int n = 0;
  for (const auto& v : load_views(fs::path(cfg.output_root) / "register/views.json")) {
    if (v.view.status != geom::ViewStatus::registered) continue;
    if (manifest.record_decision({v.view.view_id, verdict, reason, reviewer, {}})) ++n;
  }
  return n;
}

}  // namespace amos::pipeline
