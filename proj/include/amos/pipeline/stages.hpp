#pragma once

#include "amos/pipeline/config.hpp"
#include "amos/pipeline/manifest.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace amos::pipeline {

/// Raised for ordering and configuration problems (missing predecessor,
/// changed config without --force, nothing accepted to sample from).
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StageOutcome {
  std::string stage;
  bool noop = false;
  json record;  // the appended record, or the existing one for a no-op
};

inline std::filesystem::path manifest_path(const PipelineConfig& cfg) {
  return std::filesystem::path(cfg.output_root) / "manifest.jsonl";
}

/// Runs one stage. A rerun with identical stage config, inputs and intact
/// outputs does nothing; a changed stage config needs `force`.
StageOutcome run_stage(const std::string& stage, const PipelineConfig& cfg, bool force = false);

/// Batch-composition experiment on the exported training split with the
/// baseline descriptor. Writes the report to `report` (default
/// <out>/reports/batch_composition.txt) and returns its text.
std::string run_batch_report(const PipelineConfig& cfg, const std::vector<int>& views_per_batch, int batch_size, int batches,
                             const std::filesystem::path& report = {});

/// Records an accepted (or rejected) decision for every view the register
/// stage kept. Returns the number of decisions appended.
int decide_all(const PipelineConfig& cfg, const std::string& verdict, const std::string& reviewer,
               const std::string& reason = {});

}  // namespace amos::pipeline
