#pragma once

#include <json.hpp>

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace amos::pipeline {

using json = nlohmann::json;

inline const std::vector<std::string> kStages{"gate", "cluster", "views", "register", "sample", "export", "eval", "dereg"};

/// Stage that must have completed before `stage` can run ("" for gate).
std::string predecessor(const std::string& stage);

struct PruneDecision {
  std::string view_id;
  std::string verdict;  // accepted | rejected
  std::string reason;
  std::string reviewer;
  std::string timestamp;
};

/// A file under the output root (or the input root, for `input:` paths)
/// with its SHA-256.
struct ArtifactRef {
  std::string path;
  std::string sha256;

  bool operator==(const ArtifactRef&) const = default;
};

void to_json(json& j, const ArtifactRef& a);
void from_json(const json& j, ArtifactRef& a);

std::string utc_timestamp();

/// Append-only line-delimited JSON log of stage runs and review decisions.
/// One writer per process; every append is a single write followed by fsync,
/// so an interrupted run leaves at most one unterminated line, which loading
/// ignores.
class Manifest {
 public:
  explicit Manifest(std::filesystem::path path);

  [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }
  [[nodiscard]] std::vector<json> records() const;

  /// Most recent record of the given stage.
  [[nodiscard]] std::optional<json> latest_stage(const std::string& stage) const;

  void append(json record);

  /// Last decision per view.
  [[nodiscard]] std::map<std::string, PruneDecision> live_decisions() const;

  /// Appends a decision record; returns false (and appends nothing) when the
  /// live decision already has the same verdict, reason and reviewer.
  bool record_decision(PruneDecision d);

 private:
  void load();

  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::vector<json> records_;
};

/// Problems found re-hashing every artifact of the latest record per stage;
/// empty when the manifest is consistent.
std::vector<std::string> verify_manifest(const Manifest& m, const std::filesystem::path& output_root,
                                         const std::filesystem::path& input_root);

}  // namespace amos::pipeline
