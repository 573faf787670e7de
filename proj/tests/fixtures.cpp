#include "fixtures.hpp"

using namespace featreplay;

namespace testing {

const ExperimentConfig& default_config() {
  static const ExperimentConfig cfg = load_experiment_config(std::filesystem::path(FEATREPLAY_SOURCE_DIR) / "configs" / "default.json");
  return cfg;
}

const TaskStream& default_stream() {
  static const TaskStream stream = build_stream(default_config().streams.front());
  return stream;
}

TrajectoryConfig default_schedule(Method method) {
  TrajectoryConfig cfg = default_config().schedule;
  cfg.method = method;
  return cfg;
}

std::filesystem::path trained_run_dir() { return std::filesystem::temp_directory_path() / "featreplay_test_trained_run"; }

const Trajectory& trained_ccvae() {
  static const Trajectory traj = [] {
    const auto root = trained_run_dir();
    std::filesystem::remove_all(root);
    return run_sequence(default_stream(), default_schedule(Method::Ccvae), root / "hippocampus" / "ccvae");
  }();
  return traj;
}

TrajectoryConfig quick_schedule(Method method) {
  TrajectoryConfig cfg;
  cfg.method = method;
  cfg.epochs_per_task = 4;
  cfg.eval_every = 2;
  cfg.vae_epochs = 6;
  cfg.vae.max_tasks = 2;
  cfg.vae.hidden = {32, 32, 32};
  return cfg;
}

const TaskStream& tiny_stream() {
  static const TaskStream stream = [] {
    StreamConfig sc;
    sc.name = "tiny";
    sc.tasks = {domain_preset("decath"), domain_preset("dryad")};
    sc.ood = domain_preset("harp");
    sc.subjects_per_task = 21;
    sc.ood_subjects = 5;
    sc.seed = 3;
    return build_stream(sc);
  }();
  return stream;
}

}  // namespace testing
