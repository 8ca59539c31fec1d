#pragma once

#include "amos/common/binary_io.hpp"
#include "amos/common/rng.hpp"
#include "amos/sampler/patches.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace amos::sampler {

inline constexpr std::uint32_t kPatchFileVersion = 1;

/// One patch set as stored: set_size patches of u8, row-major, back to back.
struct PatchRecord {
  std::uint64_t set_id = 0;
  std::uint32_t view_ordinal = 0;
  PatchSpec spec;
  std::vector<std::uint8_t> pixels;

  bool operator==(const PatchRecord&) const = default;
};

struct PatchFile {
  std::uint32_t set_size = 0;
  std::uint32_t patch_w = 96;
  std::uint32_t patch_h = 96;
  std::vector<PatchRecord> records;

  [[nodiscard]] std::size_t patch_pixels() const noexcept { return static_cast<std::size_t>(patch_w) * patch_h; }
  bool operator==(const PatchFile&) const = default;
};

inline std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(static_cast<double>(v)), 0L, 255L));
}

inline PatchRecord to_record(const PatchSet& ps, std::uint32_t view_ordinal) {
  PatchRecord r{ps.set_id, view_ordinal, ps.spec, {}};
  for (const auto& p : ps.patches)
    for (float v : p.pixels()) r.pixels.push_back(quantize(v));
  return r;
}

inline GrayImage record_patch(const PatchFile& f, const PatchRecord& r, std::size_t member) {
  const std::size_t n = f.patch_pixels();
  if ((member + 1) * n > r.pixels.size()) throw std::out_of_range("record_patch: member index");
  std::vector<float> px(n);
  for (std::size_t i = 0; i < n; ++i) px[i] = r.pixels[member * n + i];
  return GrayImage(static_cast<int>(f.patch_w), static_cast<int>(f.patch_h), std::move(px));
}

inline PatchSet to_patch_set(const PatchFile& f, const PatchRecord& r, std::string view_id) {
  PatchSet ps{r.set_id, std::move(view_id), r.spec, {}};
  for (std::size_t m = 0; m < f.set_size; ++m) ps.patches.push_back(record_patch(f, r, m));
  return ps;
}

namespace detail {

inline void write_record(std::ostream& out, const PatchFile& f, const PatchRecord& r) {
  if (r.pixels.size() != f.set_size * f.patch_pixels()) throw std::invalid_argument("patch record size mismatch");
  binio::put_le<std::uint64_t>(out, r.set_id);
  binio::put_le<std::uint32_t>(out, r.view_ordinal);
  for (double v : {r.spec.x, r.spec.y, r.spec.scale, r.spec.angle}) binio::put_le<double>(out, v);
  out.write(reinterpret_cast<const char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
}

}  // namespace detail

// AMPS v1: magic, u32 version, u32 n_sets, u32 set_size, u32 patch_w,
// u32 patch_h; per set u64 set_id, u32 view_ordinal, 4 f64 spec (x, y, scale,
// angle), then set_size * patch_w * patch_h u8. Little-endian.
inline void write_patch_file(std::ostream& out, const PatchFile& f) {
  out.write("AMPS", 4);
  binio::put_le<std::uint32_t>(out, kPatchFileVersion);
  binio::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(f.records.size()));
  binio::put_le<std::uint32_t>(out, f.set_size);
  binio::put_le<std::uint32_t>(out, f.patch_w);
  binio::put_le<std::uint32_t>(out, f.patch_h);
  for (const auto& r : f.records) detail::write_record(out, f, r);
  if (!out) throw std::runtime_error("write_patch_file: stream error");
}

inline PatchFile read_patch_file(std::istream& in) {
  binio::expect_magic(in, "AMPS");
  const auto version = binio::get_le<std::uint32_t>(in);
  if (version != kPatchFileVersion) throw std::runtime_error("AMPS: unsupported version " + std::to_string(version));
  const auto n = binio::get_le<std::uint32_t>(in);
  PatchFile f;
  f.set_size = binio::get_le<std::uint32_t>(in);
  f.patch_w = binio::get_le<std::uint32_t>(in);
  f.patch_h = binio::get_le<std::uint32_t>(in);
  const std::size_t bytes = f.set_size * f.patch_pixels();
  f.records.resize(n);
  for (auto& r : f.records) {
    r.set_id = binio::get_le<std::uint64_t>(in);
    r.view_ordinal = binio::get_le<std::uint32_t>(in);
    r.spec.x = binio::get_le<double>(in);
    r.spec.y = binio::get_le<double>(in);
    r.spec.scale = binio::get_le<double>(in);
    r.spec.angle = binio::get_le<double>(in);
    r.pixels.resize(bytes);
    in.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(bytes));
    if (in.gcount() != static_cast<std::streamsize>(bytes)) throw std::runtime_error("AMPS: truncated patch data");
  }
  return f;
}

/// Writes through a temporary file and renames, so a crash never leaves a
/// half-written dataset under the final name.
inline void save_patch_file(const std::filesystem::path& path, const PatchFile& f) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string());
    write_patch_file(out, f);
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline PatchFile load_patch_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_patch_file(in);
}

struct ViewProvenance {
  std::string view_id;
  std::string camera_id;
  std::vector<std::string> member_ids;
};

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

/// Whole views go to test: clamp(round(fraction * n), 1, n) of them, chosen by
/// a seeded shuffle of the sorted view ids.
inline std::map<std::string, Split> assign_splits(const std::vector<std::string>& view_ids, double test_fraction,
                                                  std::uint64_t seed) {
  if (view_ids.empty()) throw std::invalid_argument("assign_splits: no views");
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw std::invalid_argument("assign_splits: fraction outside [0,1]");
  std::vector<std::string> ids(view_ids);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw std::invalid_argument("assign_splits: duplicate view id");
  const auto n = static_cast<long>(ids.size());
  const long n_test = std::clamp(std::lround(test_fraction * static_cast<double>(n)), 1L, n);
  auto rng = make_rng(derive_seed(seed, {"split"}));
  std::shuffle(ids.begin(), ids.end(), rng);
  std::map<std::string, Split> out;
  for (long i = 0; i < n; ++i) out[ids[static_cast<std::size_t>(i)]] = i < n_test ? Split::test : Split::train;
  return out;
}

struct ExportResult {
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  std::filesystem::path manifest_path;
  std::size_t train_sets = 0;
  std::size_t test_sets = 0;
  std::map<std::string, Split> splits;
};

/// Splits `all` (view_ordinal indexes `views`) into train/test AMPS files and
/// writes a text manifest with provenance and the echoed parameters.
inline ExportResult export_dataset(const PatchFile& all, const std::vector<ViewProvenance>& views,
                                   const std::map<std::string, Split>& splits,
                                   const std::vector<std::pair<std::string, std::string>>& params,
                                   const std::filesystem::path& out_dir) {
  if (views.empty() || all.records.empty()) throw std::invalid_argument("export_dataset: nothing to export");
  std::set<std::string> seen;
  for (const auto& v : views) {
    if (!seen.insert(v.view_id).second) throw std::invalid_argument("export_dataset: view listed twice: " + v.view_id);
    if (!splits.count(v.view_id)) throw std::invalid_argument("export_dataset: view without split: " + v.view_id);
  }
  std::filesystem::create_directories(out_dir);
  ExportResult res;
  res.splits = splits;
  res.train_path = out_dir / "train.amps";
  res.test_path = out_dir / "test.amps";
  res.manifest_path = out_dir / "manifest.txt";

  PatchFile train{all.set_size, all.patch_w, all.patch_h, {}};
  PatchFile test = train;
  std::ostringstream m;
  m << "amos-patches 1\n";
  for (const auto& [k, v] : params) m << "param " << k << ' ' << v << '\n';
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& v = views[i];
    m << "view " << i << ' ' << v.view_id << ' ' << v.camera_id << ' ' << to_string(splits.at(v.view_id)) << ' '
      << v.member_ids.size();
    for (const auto& id : v.member_ids) m << ' ' << id;
    m << '\n';
  }
  for (const auto& r : all.records) {
    if (r.view_ordinal >= views.size()) throw std::invalid_argument("export_dataset: bad view ordinal");
    const Split s = splits.at(views[r.view_ordinal].view_id);
    (s == Split::train ? train : test).records.push_back(r);
    m << "set " << r.set_id << ' ' << r.view_ordinal << ' ' << to_string(s) << '\n';
  }
  save_patch_file(res.train_path, train);
  save_patch_file(res.test_path, test);
  {
    auto tmp = res.manifest_path;
    tmp += ".tmp";
    std::ofstream out(tmp, std::ios::trunc);
    out << m.str();
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
    out.close();
    std::filesystem::rename(tmp, res.manifest_path);
  }
  res.train_sets = train.records.size();
  res.test_sets = test.records.size();
  return res;
}

/// View provenance and split per ordinal, parsed back from manifest.txt.
struct ExportManifest {
  std::vector<std::pair<std::string, std::string>> params;
  std::vector<ViewProvenance> views;
  std::vector<Split> view_split;
};

inline ExportManifest parse_export_manifest(std::istream& in) {
  ExportManifest m;
  std::string line;
  if (!std::getline(in, line) || line != "amos-patches 1") throw std::runtime_error("export manifest: bad header");
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "param") {
      std::string k, v;
      ls >> k;
      std::getline(ls >> std::ws, v);
      m.params.emplace_back(k, v);
    } else if (kind == "view") {
      std::size_t ord = 0, n = 0;
      ViewProvenance p;
      std::string split;
      ls >> ord >> p.view_id >> p.camera_id >> split >> n;
      if (!ls || ord != m.views.size()) throw std::runtime_error("export manifest: bad view line: " + line);
      p.member_ids.resize(n);
      for (auto& id : p.member_ids) ls >> id;
      m.views.push_back(std::move(p));
      m.view_split.push_back(split == "test" ? Split::test : Split::train);
    }
  }
  return m;
}

}  // namespace amos::sampler
