#include "amos/evalbench/batch_report.hpp"
#include "amos/pipeline/config.hpp"
#include "amos/pipeline/manifest.hpp"
#include "amos/pipeline/review.hpp"
#include "amos/pipeline/stages.hpp"
#include "amos/pipeline/synth.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

namespace {

using namespace amos::pipeline;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string out;
  std::string input;
  bool force = false;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "Config file (flat key = value)");
  app->add_option("--seed", f.seed, "Global seed");
  app->add_option("--jobs", f.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app->add_option("--out", f.out, "Output root");
  app->add_option("--input", f.input, "Input root (camera directories)");
  app->add_flag("--force", f.force, "Rerun even if the stage config changed");
}

PipelineConfig resolve(const CommonFlags& f) {
  PipelineConfig c = f.config.empty() ? PipelineConfig{} : load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.jobs) c.jobs = *f.jobs;
  if (!f.out.empty()) c.output_root = f.out;
  if (!f.input.empty()) c.input_root = f.input;
  c.validate();
  return c;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"amos: webcam patch-dataset pipeline"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  CommonFlags flags;
  std::vector<std::pair<std::string, CLI::App*>> stages;
  for (const auto& s : kStages) {
    auto* sub = app.add_subcommand(s, "Run the " + s + " stage");
    add_common(sub, flags);
    stages.emplace_back(s, sub);
  }

  auto* all = app.add_subcommand("run", "Run stages in order, from --from to --to");
  add_common(all, flags);
  std::string from = "gate", to = "eval";
  all->add_option("--from", from, "First stage");
  all->add_option("--to", to, "Last stage");

  auto* synth = app.add_subcommand("synth", "Generate synthetic cameras");
  SynthOptions so;
  std::string synth_out = "input", kinds;
  synth->add_option("--out", synth_out, "Directory to create");
  synth->add_option("--cameras", so.n_cameras, "Number of cameras")->check(CLI::PositiveNumber);
  synth->add_option("--frames", so.frames, "Frames per camera")->check(CLI::PositiveNumber);
  synth->add_option("--width", so.width, "Frame width");
  synth->add_option("--height", so.height, "Frame height");
  synth->add_option("--seed", so.seed, "Seed");
  synth->add_option("--switch-at", so.switch_at, "Frame where a switch camera pans away");
  synth->add_option("--kinds", kinds, "Comma-separated camera kinds (static,switch,dynamic,black,moving,dup)");

  auto* serve = app.add_subcommand("review-serve", "Serve the review API");
  add_common(serve, flags);
  std::string host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks one)");

  auto* autoflag = app.add_subcommand("autoflag", "Compute advisory review flags");
  add_common(autoflag, flags);

  auto* decide = app.add_subcommand("decide", "Record review decisions without the UI");
  add_common(decide, flags);
  std::string view_id, verdict = "accepted", reason, reviewer = "cli";
  bool decide_all_views = false;
  decide->add_option("--view", view_id, "View id");
  decide->add_flag("--all", decide_all_views, "Every registered view");
  decide->add_option("--verdict", verdict, "accepted | rejected")->check(CLI::IsMember({"accepted", "rejected"}));
  decide->add_option("--reason", reason, "Free text");
  decide->add_option("--reviewer", reviewer, "Reviewer name");

  auto* batch = app.add_subcommand("batch-report", "Batch-composition experiment on the exported training split");
  add_common(batch, flags);
  std::string vpb_list = "1,6,all", batch_out;
  int batch_size = 128, batch_count = 64;
  batch->add_option("--views-per-batch", vpb_list, "Comma-separated settings; 'all' uses every view");
  batch->add_option("--batch-size", batch_size, "Patch pairs per batch")->check(CLI::Range(2, 1 << 20));
  batch->add_option("--batches", batch_count, "Batches per setting")->check(CLI::PositiveNumber);
  batch->add_option("--report", batch_out, "Report path (default <out>/reports/batch_composition.txt)");

  auto* verify = app.add_subcommand("verify", "Re-hash every artifact recorded in the manifest");
  add_common(verify, flags);

  auto* show = app.add_subcommand("config", "Print the effective configuration");
  add_common(show, flags);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    for (const auto& [name, sub] : stages) {
      if (sub->parsed()) {
        const auto r = run_stage(name, resolve(flags), flags.force);
        std::cout << name << (r.noop ? ": up to date\n" : ": done\n");
        return 0;
      }
    }
    if (all->parsed()) {
      const auto cfg = resolve(flags);
      const auto a = std::find(kStages.begin(), kStages.end(), from);
      const auto b = std::find(kStages.begin(), kStages.end(), to);
      if (a == kStages.end() || b == kStages.end() || a > b) throw std::invalid_argument("bad --from/--to range");
      for (auto it = a; it <= b; ++it) {
        const auto r = run_stage(*it, cfg, flags.force);
        std::cout << *it << (r.noop ? ": up to date\n" : ": done\n");
      }
      return 0;
    }
    if (synth->parsed()) {
      so.kinds = split_list(kinds);
      const auto truth = make_synthetic_cameras(synth_out, so);
      for (const auto& c : truth.cameras) std::cout << c.camera_id << ' ' << c.kind << ' ' << c.frames.size() << '\n';
      return 0;
    }
    if (serve->parsed()) {
      ReviewServer server(resolve(flags));
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const int bound = server.start(host, port);
      std::cout << "listening on http://" << host << ':' << bound << std::endl;
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
      return 0;
    }
    if (autoflag->parsed()) {
      for (const auto& f : run_autoflag(resolve(flags))) {
        std::cout << f.view_id;
        for (const auto& l : f.labels()) std::cout << ' ' << l;
        std::cout << '\n';
      }
      return 0;
    }
    if (decide->parsed()) {
      const auto cfg = resolve(flags);
      if (decide_all_views) {
        std::cout << decide_all(cfg, verdict, reviewer, reason) << " decisions recorded\n";
      } else {
        if (view_id.empty()) throw std::invalid_argument("decide: give --view or --all");
        ReviewService svc(cfg);
        const auto r = svc.decide(view_id, json{{"verdict", verdict}, {"reason", reason}, {"reviewer", reviewer}}.dump());
        std::cout << r.body << '\n';
        return r.status == 200 ? 0 : 1;
      }
      return 0;
    }
    if (batch->parsed()) {
      std::cout << run_batch_report(resolve(flags), amos::eval::parse_views_per_batch(vpb_list), batch_size, batch_count, batch_out);
      return 0;
    }
    if (verify->parsed()) {
      const auto cfg = resolve(flags);
      const auto problems = verify_manifest(Manifest(manifest_path(cfg)), cfg.output_root, cfg.input_root);
      for (const auto& p : problems) std::cout << p << '\n';
      std::cout << (problems.empty() ? "manifest consistent\n" : "manifest inconsistent\n");
      return problems.empty() ? 0 : 1;
    }
    if (show->parsed()) {
      std::cout << format_config(resolve(flags));
      return 0;
    }
  } catch (const StageError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
