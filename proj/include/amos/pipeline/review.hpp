#pragma once

#include "amos/pipeline/artifacts.hpp"
#include "amos/pipeline/config.hpp"
#include "amos/pipeline/manifest.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace amos::pipeline {

struct ViewFlags {
  std::string view_id;
  double dynamic_fraction = 0.0;  // share of pixels whose normalized temporal std exceeds the threshold
  double exposure_std = 0.0;      // std of per-frame mean intensity
  std::string duplicate_of;
  double duplicate_cos = 0.0;
  bool dynamic = false;
  bool exposure = false;
  bool duplicate = false;

  [[nodiscard]] std::vector<std::string> labels() const;
};

/// Advisory flags for every registered view. Views are compared for
/// duplicates against earlier (by id) views that are not rejected; the later
/// one is flagged. Never changes a decision.
std::vector<ViewFlags> autoflag_views(const PipelineConfig& cfg);

/// Runs autoflag_views, writes review/flags.json and logs an advisory record.
std::vector<ViewFlags> run_autoflag(const PipelineConfig& cfg);

struct HttpReply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Request handling for the review endpoints, independent of the transport.
class ReviewService {
 public:
  explicit ReviewService(const PipelineConfig& cfg);

  HttpReply list_views() const;
  HttpReply frame(const std::string& view_id, int k) const;
  HttpReply overlay(const std::string& view_id, int k) const;
  HttpReply decide(const std::string& view_id, const std::string& body);

 private:
  struct Loaded {
    std::string view_id;
    std::vector<GrayImage> registered;  // member k warped into the reference frame
  };

  const StoredView* find(const std::string& view_id) const;
  std::shared_ptr<const Loaded> load(const StoredView& v) const;

  PipelineConfig cfg_;
  InputIndex index_;
  std::vector<StoredView> views_;
  std::map<std::string, std::vector<std::string>> flags_;
  mutable Manifest manifest_;
  mutable std::mutex cache_mutex_;
  mutable std::shared_ptr<const Loaded> cache_;
};

/// HTTP transport for ReviewService. start() binds and serves on a
/// background thread; stop() finishes in-flight requests and returns.
class ReviewServer {
 public:
  explicit ReviewServer(const PipelineConfig& cfg);
  ~ReviewServer();
  ReviewServer(const ReviewServer&) = delete;
  ReviewServer& operator=(const ReviewServer&) = delete;

  /// Returns the bound port (useful with port 0); throws if binding fails.
  int start(const std::string& host, int port);
  void stop();
  void wait();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace amos::pipeline
