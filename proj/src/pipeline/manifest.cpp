#include "amos/pipeline/manifest.hpp"

#include "amos/pipeline/hashing.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <stdexcept>

#include <fcntl.h>
#include <unistd.h>

namespace amos::pipeline {

std::string predecessor(const std::string& stage) {
  if (stage == "gate") return "";
  if (stage == "cluster") return "gate";
  if (stage == "views") return "cluster";
  if (stage == "register") return "views";
  if (stage == "sample") return "register";
  if (stage == "export") return "sample";
  if (stage == "eval" || stage == "dereg") return "export";
  throw std::invalid_argument("unknown stage: " + stage);
}

void to_json(json& j, const ArtifactRef& a) { j = json{{"path", a.path}, {"sha256", a.sha256}}; }

void from_json(const json& j, ArtifactRef& a) {
  j.at("path").get_to(a.path);
  j.at("sha256").get_to(a.sha256);
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Manifest::Manifest(std::filesystem::path path) : path_(std::move(path)) { load(); }

void Manifest::load() {
  records_.clear();
  std::ifstream in(path_, std::ios::binary);
  if (!in) return;
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  int lineno = 0;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    ++lineno;
    if (nl == std::string::npos) {
      spdlog::warn("{}: ignoring unterminated final line {}", path_.string(), lineno);
      break;
    }
    const std::string line = content.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    try {
      records_.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw std::runtime_error(path_.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::vector<json> Manifest::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::optional<json> Manifest::latest_stage(const std::string& stage) const {
  std::lock_guard lock(mutex_);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->value("kind", "") == "stage" && it->value("stage", "") == stage) return *it;
  }
  return std::nullopt;
}

void Manifest::append(json record) {
  std::lock_guard lock(mutex_);
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  const std::string line = record.dump() + "\n";
  const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw std::runtime_error("cannot open " + path_.string());
  const auto n = ::write(fd, line.data(), line.size());
  const bool ok = n == static_cast<ssize_t>(line.size()) && ::fsync(fd) == 0;
  ::close(fd);
  if (!ok) throw std::runtime_error("manifest append failed: " + path_.string());
  records_.push_back(std::move(record));
}

std::map<std::string, PruneDecision> Manifest::live_decisions() const {
  std::lock_guard lock(mutex_);
  std::map<std::string, PruneDecision> out;
  for (const auto& r : records_) {
    if (r.value("kind", "") != "decision") continue;
    PruneDecision d{r.at("view_id"), r.at("verdict"), r.value("reason", ""), r.value("reviewer", ""), r.value("timestamp", "")};
    out[d.view_id] = d;
  }
  return out;
}

bool Manifest::record_decision(PruneDecision d) {
  if (d.verdict != "accepted" && d.verdict != "rejected") throw std::invalid_argument("verdict must be accepted or rejected");
  const auto live = live_decisions();
  if (const auto it = live.find(d.view_id); it != live.end()) {
    const auto& old = it->second;
    if (old.verdict == d.verdict && old.reason == d.reason && old.reviewer == d.reviewer) return false;
    spdlog::info("decision for {} overrides {} ({}) by {}", d.view_id, old.verdict, old.timestamp, old.reviewer);
  }
  if (d.timestamp.empty()) d.timestamp = utc_timestamp();
  append(json{{"kind", "decision"},
              {"view_id", d.view_id},
              {"verdict", d.verdict},
              {"reason", d.reason},
              {"reviewer", d.reviewer},
              {"timestamp", d.timestamp}});
  return true;
}

std::vector<std::string> verify_manifest(const Manifest& m, const std::filesystem::path& output_root,
                                         const std::filesystem::path& input_root) {
  std::vector<std::string> problems;
  for (const auto& stage : kStages) {
    const auto rec = m.latest_stage(stage);
    if (!rec) continue;
    for (const char* list : {"inputs", "outputs"}) {
      for (const auto& a : rec->value(list, json::array()).get<std::vector<ArtifactRef>>()) {
        const bool is_input = a.path.rfind("input:", 0) == 0;
        const auto file = is_input ? input_root / a.path.substr(6) : output_root / a.path;
        try {
          const auto h = sha256_tree(file);
          if (h != a.sha256) problems.push_back(stage + ": hash mismatch for " + a.path);
        } catch (const std::exception& e) {
          problems.push_back(stage + ": " + e.what());
        }
      }
    }
  }
  return problems;
}

}  // namespace amos::pipeline
