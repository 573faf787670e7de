#pragma once

#include "featreplay/artifacts.hpp"
#include "featreplay/cvae.hpp"
#include "featreplay/metrics.hpp"
#include "featreplay/nn/adam.hpp"
#include "featreplay/ood.hpp"
#include "featreplay/replay.hpp"
#include "featreplay/segmenter.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace featreplay {

enum class Method { Ccvae, CvaeTaskOnly, Sequential, Ewc };

std::string to_string(Method method);
/// Throws ConfigError for unknown names.
Method method_from_string(const std::string& name);
bool uses_vae(Method method);

struct TrajectoryConfig {
  Method method = Method::Ccvae;
  int epochs_per_task = 50;
  int vae_epochs = 500;
  int batch_size = 16;
  int vae_batch_size = 32;
  nn::AdamOptions optimizer;
  int eval_every = 10;
  double ewc_lambda = 0.4;
  double vae_beta = 1.0;
  /// Fraction of VAE epochs over which beta ramps up linearly.
  double beta_warmup = 0.1;
  /// Probability of zeroing a real slice's skips during segmentation training.
  double skip_dropout = 0.5;
  /// Memory entries per past task; 0 means "as many as the new task's training slices".
  int memory_per_task = 0;
  bool artifact_augmentation = true;
  ArtifactStrengths artifacts;
  std::uint64_t seed = 1;
  std::uint64_t artifact_seed = 2;
  UNetConfig unet;
  CcvaeConfig vae;

  /// Throws ConfigError unless epochs_per_task >= eval_every >= 1 and sizes are positive.
  void validate() const;
  nlohmann::json to_json() const;
  /// Overrides defaults with the keys present in `j`.
  static TrajectoryConfig from_json(const nlohmann::json& j);
};

/// Called after every epoch with (epoch index within the stage, mean training loss).
using EpochHook = std::function<void(int, double)>;

/// All slices of `volumes`, tagged with `task`.
std::vector<SliceSample> task_slices(const std::vector<Volume>& volumes, int task, const UNetConfig& cfg);

/// Past-task anchor for the EWC penalty; tensors follow UNet2D::all_params() order.
struct EwcAnchor {
  std::vector<Mat> fisher;
  std::vector<Mat> theta;
};

/// Segmentation training on real slices (CE + Dice) and, when `memory` is
/// given, an equal number of memory entries per batch (soft-target CE, no
/// skips). Optimizes unet.trainable_params(); the EWC penalty is added for each
/// anchor. Returns the mean loss of each epoch.
std::vector<double> train_segmenter(UNet2D& unet, const std::vector<SliceSample>& slices, const Memory* memory,
                                    const std::vector<EwcAnchor>& anchors, const TrajectoryConfig& cfg, Rng& rng,
                                    const EpochHook& hook = {});

/// Train the whole UNet on the first task, freeze its encoder and return the
/// feature statistics of the task's training slices.
FeatureStats train_first_task(UNet2D& unet, const std::vector<SliceSample>& slices, const TrajectoryConfig& cfg, Rng& rng,
                              const EpochHook& hook = {});

/// Bottleneck features of real slices with their (t, s) conditioning, normalized
/// with the statistics of each slice's task.
FeatureBatch real_feature_batch(const UNet2D& unet, const std::vector<SliceSample>& slices, const Ccvae& vae);
/// Normalized memory features with their (t, s) conditioning.
FeatureBatch memory_feature_batch(const Memory& memory, const Ccvae& vae);
FeatureBatch concat_batches(const FeatureBatch& a, const FeatureBatch& b);

/// Optimize the VAE's ELBO on `data` (warm start). Beta ramps up linearly over
/// the warm-up fraction. Marks every task present in `data` as seen. Returns
/// the mean training loss of each epoch.
std::vector<double> train_vae_stage(Ccvae& vae, const FeatureBatch& data, const TrajectoryConfig& cfg, Rng& rng);

struct ContinualStepLog {
  std::vector<double> decoder_losses;
  std::vector<double> vae_losses;
  std::size_t memory_entries = 0;
};

/// One task boundary for the VAE methods: build memory for `tasks_seen`,
/// train the decoder on memory + new slices, update the VAE on new features +
/// memory (new-task normalization statistics are fitted first), refit `gaussians` (old tasks from memory, new task from real
/// features) and flush the memory. Throws StateError if the encoder is not frozen.
ContinualStepLog continual_step(UNet2D& unet, Ccvae& vae, const std::vector<SliceSample>& new_slices, int new_task,
                                const std::vector<int>& tasks_seen, const TrajectoryConfig& cfg, Rng& rng,
                                std::map<int, DiagGaussian>* gaussians = nullptr, const EpochHook& hook = {});

/// Diagonal Fisher: mean over slices of squared gradients of the log-likelihood
/// of the network's own argmax prediction (summed over pixels), in inference mode.
std::vector<Mat> ewc_fisher(UNet2D& unet, const std::vector<SliceSample>& slices);

/// lambda/2 * sum_k sum_j F_kj (theta_j - theta*_kj)^2. With add_grad the
/// derivative is accumulated into the parameters' gradients.
double ewc_penalty(const std::vector<nn::Param*>& params, const std::vector<EwcAnchor>& anchors, double lambda, bool add_grad);

/// Mean reconstruction error of the volumes' features under condition `task`.
double mean_reconstruction_error(const Ccvae& vae, const UNet2D& unet, const std::vector<Volume>& volumes, int task);

// --- evaluation ---------------------------------------------------------------------------

enum class Scorer { Reconstruction, Mahalanobis, MaxSoftmax };
std::string to_string(Scorer scorer);

struct VolumeEval {
  std::string subject_id;
  int task = -1;          ///< stream task index, -1 for the held-out domain
  std::string kind;       ///< "original", an artifact name, or "ood_domain"
  int source = -1;        ///< index of the unaugmented counterpart for artifact copies
  double dice = 0.0;
};

struct ScorerEval {
  Scorer scorer = Scorer::Reconstruction;
  double tau = 0.0;
  std::vector<double> val_scores;
  double val_id_fraction = 0.0;
  std::vector<OodVerdict> verdicts;  ///< one per evaluated volume, same order as StageResult::volumes
  int n_id = 0;
  MeanStd dice_id;                   ///< percent
  double ece_id = 0.0;
  /// Fraction of artifact copies scoring above their originals (NaN when none).
  double artifact_pair_rate = 0.0;
  /// AUROC of held-out-domain scores vs original test scores of seen tasks (NaN when none).
  double ood_auroc = 0.0;
};

struct StageResult {
  int stage = 0;
  std::string task_name;
  std::vector<MeanStd> task_dice;  ///< per stream task, original test volumes, percent
  std::vector<VolumeEval> volumes;
  MeanStd dice_all;
  double ece_all = 0.0;
  std::vector<ScorerEval> scorers;  ///< first entry is the method's primary OoD scorer
};

struct CurvePoint {
  int stage = 0;
  int epoch = 0;  ///< global epoch along the trajectory
  double train_loss = 0.0;
  std::vector<double> task_dice;  ///< percent, original test volumes of every task
};

struct Trajectory {
  Method method = Method::Ccvae;
  std::string stream_name;
  std::vector<std::string> task_names;
  Matrix dice;      ///< R[stage][task], percent
  Matrix dice_std;
  std::vector<StageResult> stages;
  std::vector<CurvePoint> curve;
  std::vector<std::filesystem::path> checkpoints;  ///< one directory per stage
  /// Final-stage recon error matrix E[a][b]: task a validation features under condition b (VAE methods).
  Matrix conditioning;
  std::optional<UNet2D> unet;
  std::optional<Ccvae> vae;
  std::map<int, DiagGaussian> gaussians;
};

/// Evaluate the current models after `stage` (tasks 0..stage seen).
StageResult evaluate_stage(const TaskStream& stream, int stage, const UNet2D& unet, const Ccvae* vae,
                           const std::map<int, DiagGaussian>& gaussians, const TrajectoryConfig& cfg);

/// Run one method over the whole stream. When `out_dir` is set, each stage's
/// models are written to out_dir/stage_<i>/ after the stage completes.
Trajectory run_sequence(const TaskStream& stream, const TrajectoryConfig& cfg, const std::optional<std::filesystem::path>& out_dir = {});

/// run_sequence with the slice input removed from the VAE.
Trajectory run_cvae_ablation(const TaskStream& stream, TrajectoryConfig cfg, const std::optional<std::filesystem::path>& out_dir = {});

}  // namespace featreplay
