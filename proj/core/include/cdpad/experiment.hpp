#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cdpad/config.hpp"
#include "cdpad/metrics.hpp"
#include "cdpad/trainer.hpp"

namespace cdpad {

/// Per-seed pipeline outcome. Every number is traceable to a score file
/// stored under `dir`.
struct SeedResult {
  std::uint64_t seed = 0;
  std::string dir;
  MetricReport baseline;      // phase-1 backbone on source imagery, no subnet
  MetricReport target_bound;  // target stream on target imagery (upper bound)
  MetricReport adapted;       // adapted source stream on source imagery
  double domain_acc_after_stage = -1.0;    // held-out, post domain-classifier
  double domain_acc_adapted_source = -1.0; // frozen head on adapted source
  bool complete = false;
};

struct RunRecord {
  std::string config_json;
  std::string method;  // cdpad, cdpad+idr, ...
  std::vector<SeedResult> seeds;
  double wall_seconds = 0.0;
  bool complete = false;
  std::string record_path;
};

/// Full pipeline: generate data if absent, then per seed run phase 1,
/// baseline/upper-bound evals, the configured adaptation (+ prerequisite
/// stages) and the adapted eval. Writes score files, checkpoints,
/// embedding dumps and the run record JSON under out_dir.
RunRecord run_experiment(const ExperimentConfig& config);

RunRecord load_run_record(const std::string& path);

/// Dataset helper shared by the CLI paths: read if present, else generate
/// and persist.
SyntheticDataset load_or_generate_dataset(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// ablation
// ---------------------------------------------------------------------------

struct AblationCell {
  SubnetType type = SubnetType::None;
  std::optional<TapId> tap;
  std::string name() const;
};

/// The 7-cell grid: {none} plus {dense,residual} x {pool2,pool3,pool4}.
std::vector<AblationCell> ablation_grid();

struct AblationCellResult {
  AblationCell cell;
  std::vector<double> bpcer1_per_seed;
  std::vector<double> bpcer5_per_seed;
  Aggregate bpcer1;
  Aggregate bpcer5;
};

struct AblationResult {
  std::vector<AblationCellResult> cells;
  std::string csv_path;
  std::string json_path;
};

/// Runs plain CD-PAD adaptation (no extra regularizer) for every cell and
/// seed, sharing the per-seed phase-1 model across cells.
AblationResult run_ablation(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

/// Aggregates run records into a CSV (method x metric rows, mean +/- std
/// over seeds), a JSON summary, and, when embedding dumps are present, a
/// 2-d PCA scatter in SVG.
struct ReportFiles {
  std::string csv_path;
  std::string summary_path;
  std::string scatter_path;  // empty when no embeddings were found
};

ReportFiles emit_report(const std::vector<RunRecord>& records,
                        const std::string& out_dir);

}  // namespace cdpad
