#include "amos/pipeline/artifacts.hpp"
#include "amos/pipeline/config.hpp"
#include "amos/pipeline/hashing.hpp"
#include "amos/pipeline/imageio.hpp"
#include "amos/pipeline/manifest.hpp"
#include "amos/pipeline/review.hpp"
#include "amos/pipeline/stages.hpp"
#include "amos/pipeline/synth.hpp"
#include "amos/sampler/dataset.hpp"
#include "support/fixture.hpp"

#include <gtest/gtest.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <set>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace amos;
using namespace amos::pipeline;

namespace {

fs::path scratch_root() {
  static const fs::path root = [] {
    const fs::path p = fs::temp_directory_path() / ("amos-pipeline-test-" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

fs::path scratch(const std::string& name) {
  const fs::path p = scratch_root() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Five small cameras: static, moving object, duplicate of camera 0, cars,
// black. Thresholds are scaled to the 480x480, 12-frame fixture.
PipelineConfig small_config(const fs::path& input, const fs::path& out) {
  PipelineConfig c;
  c.input_root = input.string();
  c.output_root = out.string();
  c.thresholds.min_width = 450;
  c.thresholds.min_height = 450;
  c.thresholds.sample_size = 10;
  c.thresholds.pass_min = 8;
  c.view_min = 8;
  c.view_cap = 8;
  c.max_keypoints = 800;
  c.n_patch_sets = 24;
  c.validate();
  return c;
}

const fs::path& fixture_input() {
  static const fs::path input = [] {
    const fs::path p = scratch("input");
    SynthOptions so;
    so.n_cameras = 5;
    so.frames = 12;
    so.width = 480;
    so.height = 480;
    so.seed = 21;
    so.kinds = {"static", "moving", "dup", "dynamic", "black"};
    make_synthetic_cameras(p, so);
    return p;
  }();
  return input;
}

// Output root with gate..register complete, built once.
const fs::path& registered_output() {
  static const fs::path out = [] {
    const fs::path p = scratch("registered");
    const auto cfg = small_config(fixture_input(), p);
    for (const char* s : {"gate", "cluster", "views", "register"}) run_stage(s, cfg);
    return p;
  }();
  return out;
}

// A private copy of the registered output so a test can add decisions or stages.
PipelineConfig fresh_copy(const std::string& name) {
  const fs::path dst = scratch(name);
  fs::copy(registered_output(), dst, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  return small_config(fixture_input(), dst);
}

std::vector<std::string> registered_ids(const PipelineConfig& cfg) {
  std::vector<std::string> ids;
  for (const auto& v : load_views(fs::path(cfg.output_root) / "register/views.json"))
    if (v.view.status == geom::ViewStatus::registered) ids.push_back(v.view.view_id);
  return ids;
}

class Quiet : public ::testing::Environment {
 public:
  void SetUp() override { spdlog::set_level(spdlog::level::warn); }
  void TearDown() override { fs::remove_all(scratch_root()); }
};
const auto* const quiet_env = ::testing::AddGlobalTestEnvironment(new Quiet);

}  // namespace

// ---- config ----

TEST(Config, DefaultsAndParse) {
  const PipelineConfig d;
  EXPECT_EQ(d.k, 120);
  EXPECT_EQ(d.n_patch_sets, 30000);
  EXPECT_EQ(d.view_min, 50);
  const auto c = parse_config("# comment\nseed = 7\n  k=12  \n\nmask_mode = response-then-average\n");
  EXPECT_EQ(c.seed, 7U);
  EXPECT_EQ(c.k, 12);
  EXPECT_EQ(c.parsed_mask_mode(), sampler::MaskMode::response_then_average);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("no_such_key = 1\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("k = twelve\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("k 12\n"), std::invalid_argument);
  PipelineConfig c;
  c.k = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Config, FormatRoundTrip) {
  PipelineConfig c;
  c.seed = 99;
  c.scale_min = 70.5;
  c.dereg_shifts = "0,3";
  const auto back = parse_config(format_config(c));
  EXPECT_EQ(to_pairs(back), to_pairs(c));
}

TEST(Config, StageHashTracksOnlyItsKeys) {
  PipelineConfig a, b;
  b.n_patch_sets = 10;
  EXPECT_EQ(stage_config_hash(a, "gate"), stage_config_hash(b, "gate"));
  EXPECT_NE(stage_config_hash(a, "sample"), stage_config_hash(b, "sample"));
  b = a;
  b.jobs = 8;
  b.output_root = "elsewhere";
  for (const auto& s : kStages) EXPECT_EQ(stage_config_hash(a, s), stage_config_hash(b, s)) << s;
  b = a;
  b.seed = 5;
  for (const auto& s : kStages) EXPECT_NE(stage_config_hash(a, s), stage_config_hash(b, s)) << s;
  EXPECT_TRUE(is_runtime_key("jobs"));
  EXPECT_FALSE(is_runtime_key("seed"));
}

// ---- hashing and manifest ----

TEST(Hashing, KnownVectorAndTree) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const fs::path d = scratch("tree");
  write_file_atomic(d / "a.txt", "one");
  write_file_atomic(d / "sub/b.txt", "two");
  const auto h1 = sha256_tree(d);
  EXPECT_EQ(h1, sha256_tree(d));
  write_file_atomic(d / "sub/b.txt", "too");
  EXPECT_NE(h1, sha256_tree(d));
  EXPECT_EQ(sha256_tree(d / "a.txt"), sha256_hex("one"));
}

TEST(Manifest, AppendReloadAndTruncatedTail) {
  const fs::path d = scratch("manifest");
  {
    Manifest m(d / "m.jsonl");
    m.append({{"kind", "stage"}, {"stage", "gate"}, {"n", 1}});
    m.append({{"kind", "stage"}, {"stage", "gate"}, {"n", 2}});
  }
  {
    std::ofstream f(d / "m.jsonl", std::ios::app);
    f << R"({"kind":"stage","stage":"clu)";  // interrupted writer
  }
  Manifest m(d / "m.jsonl");
  ASSERT_EQ(m.records().size(), 2U);
  EXPECT_EQ(m.latest_stage("gate")->at("n"), 2);
  EXPECT_FALSE(m.latest_stage("cluster"));
}

TEST(Manifest, DecisionsOverrideAndDeduplicate) {
  const fs::path d = scratch("decisions");
  Manifest m(d / "m.jsonl");
  EXPECT_TRUE(m.record_decision({"v1", "accepted", "", "ann", {}}));
  EXPECT_FALSE(m.record_decision({"v1", "accepted", "", "ann", {}}));
  EXPECT_TRUE(m.record_decision({"v1", "rejected", "dynamic scene", "bob", {}}));
  EXPECT_THROW(m.record_decision({"v1", "maybe", "", "", {}}), std::invalid_argument);
  const auto live = Manifest(d / "m.jsonl").live_decisions();
  ASSERT_EQ(live.size(), 1U);
  EXPECT_EQ(live.at("v1").verdict, "rejected");
  EXPECT_EQ(live.at("v1").reason, "dynamic scene");
  EXPECT_EQ(Manifest(d / "m.jsonl").records().size(), 2U);
}

// ---- synthetic cameras ----

TEST(Synth, TruthMatchesOptions) {
  const auto truth = read_truth(fixture_input() / "truth.txt");
  ASSERT_EQ(truth.cameras.size(), 5U);
  EXPECT_EQ(truth.cameras[2].kind, "dup");
  for (const auto& c : truth.cameras) EXPECT_EQ(c.frames.size(), 12U);
  const auto idx = scan_inputs(fixture_input());
  EXPECT_EQ(idx.camera_images.size(), 5U);
  const auto img = load_gray(idx.path_of("cam000/f003"));
  ASSERT_TRUE(img);
  EXPECT_EQ(img->width(), 480);
}

TEST(Synth, SwitchCameraHasTwoTruthViews) {
  const fs::path d = scratch("switch");
  SynthOptions so;
  so.n_cameras = 1;
  so.frames = 10;
  so.width = 200;
  so.height = 200;
  so.switch_at = 4;
  so.kinds = {"switch"};
  const auto truth = make_synthetic_cameras(d, so);
  const auto views = truth_views(truth);
  ASSERT_EQ(views.size(), 2U);
  EXPECT_EQ(views[0].size(), 4U);
  EXPECT_EQ(views[1].size(), 6U);
  EXPECT_EQ(read_truth(d / "truth.txt").cameras[0].frames[5].viewpoint, 1);
}

// ---- stages ----

TEST(Stages, GateDropsCarsAndBlack) {
  const auto gate = read_json(registered_output() / "gate/cameras.json");
  std::map<std::string, bool> kept;
  for (const auto& c : gate.at("cameras")) kept[c.at("camera_id")] = c.at("kept");
  EXPECT_TRUE(kept.at("cam000"));
  EXPECT_TRUE(kept.at("cam001"));
  EXPECT_TRUE(kept.at("cam002"));
  EXPECT_FALSE(kept.at("cam003"));
  EXPECT_FALSE(kept.at("cam004"));
}

TEST(Stages, PredecessorRequired) {
  const auto cfg = small_config(fixture_input(), scratch("dag"));
  EXPECT_THROW(run_stage("cluster", cfg), StageError);
  EXPECT_THROW(run_stage("no-such-stage", cfg), StageError);
}

TEST(Stages, SampleNeedsAnAcceptedView) {
  const auto cfg = fresh_copy("sample-guard");
  EXPECT_THROW(run_stage("sample", cfg), StageError);
  EXPECT_GT(decide_all(cfg, "rejected", "t"), 0);
  EXPECT_THROW(run_stage("sample", cfg), StageError);
  Manifest(manifest_path(cfg)).record_decision({registered_ids(cfg).front(), "accepted", "", "t", {}});
  const auto r = run_stage("sample", cfg);
  EXPECT_FALSE(r.noop);
  ASSERT_EQ(r.record.at("items").size(), 1U);
  EXPECT_EQ(r.record.at("items")[0].at("id"), registered_ids(cfg).front());
}

TEST(Stages, RerunIsNoOpAndConfigChangeNeedsForce) {
  auto cfg = fresh_copy("rerun");
  const std::string before = read_file(manifest_path(cfg));
  EXPECT_TRUE(run_stage("gate", cfg).noop);
  EXPECT_TRUE(run_stage("register", cfg).noop);
  EXPECT_EQ(read_file(manifest_path(cfg)), before);

  cfg.jobs = 3;  // runtime only
  EXPECT_TRUE(run_stage("gate", cfg).noop);

  cfg.thresholds.lap_var_min += 1.0;
  EXPECT_THROW(run_stage("gate", cfg), StageError);
  EXPECT_FALSE(run_stage("gate", cfg, true).noop);
  EXPECT_TRUE(run_stage("gate", cfg).noop);
}

TEST(Stages, MissingOutputTriggersRerun) {
  const auto cfg = fresh_copy("repair");
  fs::remove(fs::path(cfg.output_root) / "cluster/representatives.json");
  EXPECT_FALSE(run_stage("cluster", cfg).noop);
  EXPECT_TRUE(fs::exists(fs::path(cfg.output_root) / "cluster/representatives.json"));
}

TEST(Stages, FullChainVerifiesAndDetectsTampering) {
  auto cfg = fresh_copy("chain");
  EXPECT_GT(decide_all(cfg, "accepted", "t"), 0);
  for (const char* s : {"sample", "export", "eval", "dereg"}) run_stage(s, cfg);
  const auto test = sampler::load_patch_file(fs::path(cfg.output_root) / "dataset/test.amps");
  const auto train = sampler::load_patch_file(fs::path(cfg.output_root) / "dataset/train.amps");
  EXPECT_EQ(test.records.size() + train.records.size(), 24U);
  EXPECT_EQ(train.set_size, 8U);
  EXPECT_TRUE(verify_manifest(Manifest(manifest_path(cfg)), cfg.output_root, cfg.input_root).empty());
  const auto report = read_file(fs::path(cfg.output_root) / "eval/report.txt");
  EXPECT_NE(report.find("mAP "), std::string::npos);

  write_file_atomic(fs::path(cfg.output_root) / "eval/report.txt", "mAP 1\n");
  const auto problems = verify_manifest(Manifest(manifest_path(cfg)), cfg.output_root, cfg.input_root);
  ASSERT_EQ(problems.size(), 1U);
  EXPECT_NE(problems[0].find("eval/report.txt"), std::string::npos);
}

TEST(Stages, BatchReportOnExportedSplit) {
  auto cfg = fresh_copy("batch");
  decide_all(cfg, "accepted", "t");
  for (const char* s : {"sample", "export"}) run_stage(s, cfg);
  const auto text = run_batch_report(cfg, {1}, 4, 3);
  EXPECT_NE(text.find("# batches 3"), std::string::npos);
  EXPECT_TRUE(fs::exists(fs::path(cfg.output_root) / "reports/batch_composition.txt"));
}

// ---- review ----

TEST(Autoflag, StaticMovingAndDuplicate) {
  const auto cfg = fresh_copy("autoflag");
  const auto flags = run_autoflag(cfg);
  std::map<std::string, ViewFlags> by_cam;
  for (const auto& f : flags) by_cam[f.view_id.substr(0, 6)] = f;
  ASSERT_TRUE(by_cam.count("cam000") && by_cam.count("cam001") && by_cam.count("cam002"));
  EXPECT_TRUE(by_cam["cam000"].labels().empty());
  EXPECT_TRUE(by_cam["cam001"].dynamic);
  EXPECT_FALSE(by_cam["cam001"].duplicate);
  EXPECT_TRUE(by_cam["cam002"].duplicate);
  EXPECT_EQ(by_cam["cam002"].duplicate_of.substr(0, 6), "cam000");
  // Advisory only: nothing decided.
  EXPECT_TRUE(Manifest(manifest_path(cfg)).live_decisions().empty());
}

TEST(ReviewService, ErrorsAndOverlay) {
  const auto cfg = fresh_copy("service");
  ReviewService svc(cfg);
  const auto id = registered_ids(cfg).front();
  EXPECT_EQ(svc.decide("nope", R"({"verdict":"accepted"})").status, 404);
  EXPECT_EQ(svc.decide(id, "{not json").status, 400);
  EXPECT_EQ(svc.decide(id, R"({"verdict":"perhaps"})").status, 400);
  EXPECT_EQ(svc.decide(id, R"({"reason":"no verdict"})").status, 400);
  EXPECT_EQ(svc.frame(id, 999).status, 404);
  EXPECT_EQ(svc.overlay("nope", 0).status, 404);

  const auto ov = svc.overlay(id, 0);
  ASSERT_EQ(ov.status, 200);
  EXPECT_EQ(ov.content_type, "image/png");
  const fs::path png = fs::path(cfg.output_root) / "overlay.png";
  write_file_atomic(png, ov.body);
  const auto img = load_gray(png);
  ASSERT_TRUE(img);
  for (float v : img->pixels()) ASSERT_EQ(v, 0.0F);
}

TEST(ReviewServer, HttpRoundTripSurvivesRestart) {
  const auto cfg = fresh_copy("server");
  const auto id = registered_ids(cfg).front();
  {
    ReviewServer server(cfg);
    const int port = server.start("127.0.0.1", 0);
    httplib::Client cli("127.0.0.1", port);
    auto list = cli.Get("/api/views");
    ASSERT_TRUE(list);
    EXPECT_EQ(list->status, 200);
    const auto views = json::parse(list->body);
    std::set<std::string> listed;
    for (const auto& v : views) listed.insert(v.at("view_id").get<std::string>());
    for (const auto& rid : registered_ids(cfg)) EXPECT_TRUE(listed.count(rid)) << rid;
    auto frame = cli.Get("/api/views/" + id + "/frames/1");
    ASSERT_TRUE(frame);
    EXPECT_EQ(frame->status, 200);
    EXPECT_EQ(frame->get_header_value("Content-Type"), "image/png");
    auto bad = cli.Post("/api/views/" + id + "/decision", "{oops", "application/json");
    ASSERT_TRUE(bad);
    EXPECT_EQ(bad->status, 400);
    auto missing = cli.Post("/api/views/ghost/decision", R"({"verdict":"accepted"})", "application/json");
    ASSERT_TRUE(missing);
    EXPECT_EQ(missing->status, 404);
    auto ok = cli.Post("/api/views/" + id + "/decision", R"({"verdict":"accepted","reason":"clean","reviewer":"ann"})",
                       "application/json");
    ASSERT_TRUE(ok);
    EXPECT_EQ(ok->status, 200);
    server.stop();
  }
  {
    ReviewServer server(cfg);
    const int port = server.start("127.0.0.1", 0);
    httplib::Client cli("127.0.0.1", port);
    auto list = cli.Get("/api/views");
    ASSERT_TRUE(list);
    bool seen = false;
    for (const auto& v : json::parse(list->body)) {
      if (v.at("view_id") != id) continue;
      seen = true;
      EXPECT_EQ(v.at("status"), "accepted");
      EXPECT_EQ(v.at("decision").at("reason"), "clean");
      EXPECT_EQ(v.at("decision").at("reviewer"), "ann");
    }
    EXPECT_TRUE(seen);
    server.stop();
  }
  // The decision gates sampling: exactly the accepted view is sampled.
  const auto r = run_stage("sample", cfg);
  ASSERT_EQ(r.record.at("items").size(), 1U);
  EXPECT_EQ(r.record.at("items")[0].at("id"), id);
}
