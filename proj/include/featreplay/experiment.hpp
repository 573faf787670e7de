#pragma once

#include "featreplay/datagen.hpp"
#include "featreplay/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace featreplay {

/// Named synthetic domains. Hippocampus-like: decath, dryad, harp.
/// Prostate-like: bidmc, i2cvb, hk, ucl, runmc. Throws ConfigError for unknown names.
DomainSpec domain_preset(const std::string& name);

/// A preset (key "preset") with any DomainSpec field overridden by the remaining keys.
DomainSpec domain_from_json(const nlohmann::json& j);

struct StreamConfig {
  std::string name;
  std::vector<DomainSpec> tasks;
  std::optional<DomainSpec> ood;
  int subjects_per_task = 25;
  int ood_subjects = 10;
  std::uint64_t seed = 7;
  /// Ingestion alternative: one directory of raw volumes per task (and optionally the held-out domain).
  std::vector<std::filesystem::path> task_dirs;
  std::optional<std::filesystem::path> ood_dir;
};

/// Generate (or ingest) and split every task; held-out domain subjects all go to `test`.
TaskStream build_stream(const StreamConfig& cfg);

struct ExperimentConfig {
  std::string name = "experiment";
  std::vector<StreamConfig> streams;
  std::vector<Method> methods;
  TrajectoryConfig schedule;  ///< method field ignored
  std::filesystem::path output_dir = "runs";
  nlohmann::json source;      ///< resolved configuration as written to the run directory
};

/// Parse an experiment file. Throws ConfigError on malformed input.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Output directory: absolute paths as-is, relative ones under $FEATREPLAY_OUTPUT_ROOT (or the working directory).
std::filesystem::path resolve_output_dir(const std::filesystem::path& dir);

struct MethodRun {
  std::string stream;
  Trajectory trajectory;
};

/// Execute every (stream, method) pair and write report.json, metrics.csv,
/// curves.csv, config.json and stage checkpoints into `run_dir`.
std::vector<MethodRun> run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& run_dir, std::ostream* log = nullptr);

/// Report and CSV writers (exposed for tests).
nlohmann::json build_report(const ExperimentConfig& cfg, const std::vector<MethodRun>& runs);
std::string metrics_csv(const std::vector<MethodRun>& runs);
std::string curves_csv(const std::vector<MethodRun>& runs);

/// Fixed six-decimal rendering used by the CSV files ("nan" for NaN).
std::string format_number(double v);

// --- post-hoc commands -----------------------------------------------------------------------

/// Stage directory of a finished run: <run_dir>/<stream>/<method>/stage_<k>, k = last stage when negative.
/// Empty stream/method select the first stream and a VAE method when available.
/// Throws InputError when nothing matches.
std::filesystem::path find_stage_dir(const std::filesystem::path& run_dir, const std::string& stream, const std::string& method, int stage);

/// Score every volume in `volumes_dir` with the stage's OoD scorer.
std::vector<OodVerdict> eval_ood(const std::filesystem::path& stage_dir, const std::filesystem::path& volumes_dir);
nlohmann::json verdicts_to_json(const std::vector<OodVerdict>& verdicts);

struct GeneratedMask {
  int task = 0;
  double s = 0.0;
  std::filesystem::path file;
  double foreground_fraction = 0.0;
};

/// Sample one pseudo-feature per (task, s), label it with the decoder and
/// write the argmax mask as a binary PGM into `out_dir`.
std::vector<GeneratedMask> show_generated(const std::filesystem::path& stage_dir, const std::vector<int>& tasks,
                                          const std::vector<double>& slices, std::uint64_t seed, const std::filesystem::path& out_dir);

/// Binary PGM (P5) of a label map scaled to 0..255.
void write_pgm(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels, int height, int width, int classes);

/// Write every volume of a stream (train/val/test of each task and the held-out domain) in the raw format.
void export_stream(const TaskStream& stream, const std::filesystem::path& dir);

}  // namespace featreplay
