#pragma once

#include "featreplay/experiment.hpp"
#include "featreplay/trainer.hpp"

namespace testing {

/// The bundled hippocampus configuration (configs/default.json).
const featreplay::ExperimentConfig& default_config();
const featreplay::TaskStream& default_stream();
/// Schedule of the default config with the method set.
featreplay::TrajectoryConfig default_schedule(featreplay::Method method);

/// ccVAE trained over the default 2-task stream; built once per process.
/// Stage checkpoints land in trained_run_dir()/hippocampus/ccvae.
const featreplay::Trajectory& trained_ccvae();
std::filesystem::path trained_run_dir();

/// Short schedule on a small stream (21 subjects per task, the fewest that
/// leave 5 validation volumes for threshold calibration).
featreplay::TrajectoryConfig quick_schedule(featreplay::Method method);
const featreplay::TaskStream& tiny_stream();

}  // namespace testing
