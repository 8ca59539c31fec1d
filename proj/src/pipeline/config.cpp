#include "amos/pipeline/config.hpp"

#include "amos/pipeline/hashing.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace amos::pipeline {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw std::invalid_argument("config: bad value for " + key + ": '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": '" + s + "'");
}

struct Field {
  std::string key;
  std::string stage;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

template <typename M>
Field field(std::string key, std::string stage, M PipelineConfig::*member) {
  Field f{key, std::move(stage), {}, {}};
  f.get = [member](const PipelineConfig& c) {
    const auto& v = c.*member;
    if constexpr (std::is_same_v<M, std::string>) return v;
    else if constexpr (std::is_same_v<M, bool>) return std::string(v ? "true" : "false");
    else if constexpr (std::is_floating_point_v<M>) return fmt_double(v);
    else return std::to_string(v);
  };
  f.set = [member, key](PipelineConfig& c, const std::string& s) {
    auto& v = c.*member;
    if constexpr (std::is_same_v<M, std::string>) v = s;
    else if constexpr (std::is_same_v<M, bool>) v = parse_bool(key, s);
    else v = parse_number<M>(key, s);
  };
  return f;
}

template <typename M>
Field threshold(std::string key, M FilterThresholds::*member) {
  Field f{key, "gate", {}, {}};
  f.get = [member](const PipelineConfig& c) {
    if constexpr (std::is_floating_point_v<M>) return fmt_double(c.thresholds.*member);
    else return std::to_string(c.thresholds.*member);
  };
  f.set = [member, key](PipelineConfig& c, const std::string& s) { c.thresholds.*member = parse_number<M>(key, s); };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    using C = PipelineConfig;
    return std::vector<Field>{
        field("input_root", "", &C::input_root),
        field("output_root", "", &C::output_root),
        field("seed", "*", &C::seed),
        field("jobs", "", &C::jobs),
        threshold("sky_max", &FilterThresholds::sky_max),
        threshold("lap_var_min", &FilterThresholds::lap_var_min),
        threshold("mean_min", &FilterThresholds::mean_min),
        threshold("min_width", &FilterThresholds::min_width),
        threshold("min_height", &FilterThresholds::min_height),
        threshold("sample_size", &FilterThresholds::sample_size),
        threshold("pass_min", &FilterThresholds::pass_min),
        field("det_conf_min", "gate", &C::det_conf_min),
        field("missing_sidecar", "gate", &C::missing_sidecar),
        field("k", "cluster", &C::k),
        field("normalize_embeddings", "cluster", &C::normalize_embeddings),
        field("min_inliers", "views", &C::min_inliers),
        field("max_sad", "views", &C::max_sad),
        field("view_min", "views", &C::view_min),
        field("view_cap", "views", &C::view_cap),
        field("max_keypoints", "views", &C::max_keypoints),
        field("ratio", "views", &C::ratio),
        field("inlier_px", "views", &C::inlier_px),
        field("ransac_iters", "views", &C::ransac_iters),
        field("pyramid_levels", "register", &C::pyramid_levels),
        field("refine_max_iters", "register", &C::refine_max_iters),
        field("ncc_min", "register", &C::ncc_min),
        field("mask_mode", "sample", &C::mask_mode),
        field("mask_sigma", "sample", &C::mask_sigma),
        field("n_patch_sets", "sample", &C::n_patch_sets),
        field("scale_min", "sample", &C::scale_min),
        field("scale_max", "sample", &C::scale_max),
        field("angle_max_deg", "sample", &C::angle_max_deg),
        field("test_fraction", "export", &C::test_fraction),
        field("eval_descriptors", "eval", &C::eval_descriptors),
        field("dereg_shifts", "dereg", &C::dereg_shifts),
        field("flag_dynamic_std", "autoflag", &C::flag_dynamic_std),
        field("flag_dynamic_fraction", "autoflag", &C::flag_dynamic_fraction),
        field("flag_exposure_std", "autoflag", &C::flag_exposure_std),
        field("flag_duplicate_cos", "autoflag", &C::flag_duplicate_cos),
    };
  }();
  return all;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

gate::GateConfig PipelineConfig::gate_config() const {
  gate::GateConfig g;
  g.thresholds = thresholds;
  g.det_conf_min = det_conf_min;
  g.missing_sidecar = missing_sidecar == "lenient" ? gate::SidecarPolicy::lenient : gate::SidecarPolicy::strict;
  return g;
}

geom::MatcherConfig PipelineConfig::matcher_config() const {
  geom::MatcherConfig m;
  m.max_keypoints = max_keypoints;
  m.ratio = ratio;
  m.ransac.inlier_px = inlier_px;
  m.ransac.max_iters = ransac_iters;
  return m;
}

geom::RefineOptions PipelineConfig::refine_options() const {
  geom::RefineOptions r;
  r.pyramid_levels = pyramid_levels;
  r.max_iters = refine_max_iters;
  r.ncc_min = ncc_min;
  return r;
}

sampler::SamplingRanges PipelineConfig::sampling_ranges() const {
  const double a = angle_max_deg * std::numbers::pi / 180.0;
  return {scale_min, scale_max, -a, a};
}

std::vector<double> PipelineConfig::parsed_dereg_shifts() const {
  std::vector<double> out;
  std::stringstream ss(dereg_shifts);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<double>("dereg_shifts", trim(item)));
  return out;
}

void PipelineConfig::validate() const {
  thresholds.validate();
  if (jobs < 1) throw std::invalid_argument("config: jobs must be >= 1");
  if (missing_sidecar != "strict" && missing_sidecar != "lenient") {
    throw std::invalid_argument("config: missing_sidecar must be strict or lenient");
  }
  if (k < 1) throw std::invalid_argument("config: k must be >= 1");
  if (view_cap < 2) throw std::invalid_argument("config: view_cap must be >= 2");
  if (n_patch_sets < 1) throw std::invalid_argument("config: n_patch_sets must be >= 1");
  if (!(mask_sigma > 0)) throw std::invalid_argument("config: mask_sigma must be positive");
  (void)parsed_mask_mode();
  sampling_ranges().validate();
  if (!(test_fraction >= 0 && test_fraction <= 1)) throw std::invalid_argument("config: test_fraction outside [0,1]");
  if (parsed_dereg_shifts().empty()) throw std::invalid_argument("config: dereg_shifts is empty");
}

std::vector<std::pair<std::string, std::string>> to_pairs(const PipelineConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(c));
  return out;
}

bool is_runtime_key(const std::string& key) { return find_field(key).stage.empty(); }

std::string key_stage(const std::string& key) { return find_field(key).stage; }

void set_value(PipelineConfig& c, const std::string& key, const std::string& value) { find_field(key).set(c, value); }

PipelineConfig parse_config(const std::string& text) {
  PipelineConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    set_value(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

std::string format_config(const PipelineConfig& c) {
  std::string out;
  for (const auto& [k, v] : to_pairs(c)) out += k + " = " + v + "\n";
  return out;
}

std::string stage_config_hash(const PipelineConfig& c, const std::string& stage) {
  std::string text;
  for (const auto& f : fields()) {
    if (f.stage == "*" || f.stage == stage) text += f.key + "=" + f.get(c) + "\n";
  }
  return sha256_hex(text);
}

}  // namespace amos::pipeline
