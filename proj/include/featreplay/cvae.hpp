#pragma once

#include "featreplay/nn/checkpoint.hpp"
#include "featreplay/nn/layers.hpp"
#include "featreplay/rng.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <utility>
#include <vector>

namespace featreplay {

using nn::Mat;
using nn::Vec;

/// Conditional VAE over UNet bottleneck features. The latent width always
/// equals the feature width; conditioning (one-hot task, optional scalar
/// slice position) is appended to both the encoder input and the latent code.
struct CcvaeConfig {
  int feature_dim = 512;
  int max_tasks = 4;
  std::vector<int> hidden{256, 256, 256};
  bool slice_conditioning = true;
  double leaky_slope = 0.2;

  int condition_width() const { return max_tasks + (slice_conditioning ? 1 : 0); }
  int input_width() const { return feature_dim + condition_width(); }
  int latent_dim() const { return feature_dim; }

  void validate() const;
  nlohmann::json to_json() const;
  static CcvaeConfig from_json(const nlohmann::json& j);
};

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

struct LatentCode {
  Vec mu;
  Vec logvar;
  Vec z;
};

/// Per-dimension standardization of features, fitted on one task's training slices.
struct FeatureStats {
  Vec mean;
  Vec stddev;

  bool empty() const { return mean.size() == 0; }
  static FeatureStats fit(const Mat& columns);
  Mat normalize(const Mat& columns) const;
  Mat denormalize(const Mat& columns) const;
};

/// Normalized features with their conditioning, one column per slice.
struct FeatureBatch {
  Mat features;
  std::vector<int> tasks;
  std::vector<double> slices;

  Eigen::Index size() const { return features.cols(); }
};

struct ElboTerms {
  double recon = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

/// KL[N(mu, exp(logvar)) || N(0, I)].
double kl_divergence(const Vec& mu, const Vec& logvar);

/// recon = sum of squared errors (MSE * d_u); total = recon + beta * kl.
ElboTerms elbo_loss(const Vec& u, const Vec& u_hat, const Vec& mu, const Vec& logvar, double beta);

/// z = mu + exp(logvar / 2) * eps, eps ~ N(0, I); logvar is clamped first.
Vec reparameterize(const Vec& mu, const Vec& logvar, std::uint64_t seed);
Vec reparameterize(const Vec& mu, const Vec& logvar, Rng& rng);

class Ccvae {
 public:
  Ccvae(const CcvaeConfig& config, std::uint64_t seed);

  const CcvaeConfig& config() const { return config_; }
  /// Throws ConfigError unless d_u equals the configured feature (= latent) width.
  void require_feature_dim(std::int64_t d_u) const;

  // Inference: batch-norm running statistics, no caches. Features are normalized.
  std::pair<Vec, Vec> encode(const Vec& u, int task, double s) const;
  Vec decode(const Vec& z, int task, double s) const;
  std::pair<Mat, Mat> encode_batch(const FeatureBatch& batch) const;
  Mat decode_batch(const Mat& z, const std::vector<int>& tasks, const std::vector<double>& slices) const;
  /// Per-column mean squared error between features and decode(posterior mean).
  Vec reconstruction_errors(const FeatureBatch& batch) const;

  /// One stochastic ELBO evaluation with gradients accumulated into the parameters.
  ElboTerms train_step(const FeatureBatch& batch, double beta, Rng& rng);

  /// Batch-mean ELBO given posterior parameters and fixed noise, evaluated
  /// through the decoder in `mode`. Writes d total / d mu and d total / d logvar
  /// when requested; decoder parameter gradients are accumulated.
  ElboTerms elbo_from_posterior(const FeatureBatch& batch, const Mat& mu, const Mat& logvar, const Mat& eps, double beta, nn::Mode mode,
                                Mat* dmu, Mat* dlogvar);

  std::vector<nn::Param*> params();
  std::vector<nn::Param*> encoder_params();
  std::vector<nn::Param*> decoder_params();
  Eigen::Index parameter_count();

  void mark_task_seen(int task);
  const std::set<int>& seen_tasks() const { return seen_; }
  bool trained() const { return !seen_.empty(); }

  /// Normalization statistics are kept per task; features of condition t are
  /// standardized with task t's statistics.
  bool has_stats(int task) const { return stats_.contains(task); }
  /// Throws StateError when the task has no statistics.
  const FeatureStats& stats(int task) const;
  const std::map<int, FeatureStats>& all_stats() const { return stats_; }
  void set_stats(int task, FeatureStats stats);
  /// Column j standardized (or restored) with the statistics of tasks[j].
  Mat normalize(const Mat& u, const std::vector<int>& tasks) const;
  Mat denormalize(const Mat& x, const std::vector<int>& tasks) const;

  void save(const std::filesystem::path& dir);
  static Ccvae load(const std::filesystem::path& dir);

 private:
  struct Hidden {
    nn::Linear linear;
    nn::BatchNorm norm;
    nn::LeakyRelu act;
  };

  Mat conditioned(const Mat& x, const std::vector<int>& tasks, const std::vector<double>& slices) const;
  void check_condition(int task, double s) const;
  Mat run_infer(const std::vector<Hidden>& hidden, const nn::Linear& out, const Mat& x) const;
  Mat run_forward(std::vector<Hidden>& hidden, nn::Linear& out, const Mat& x, nn::Mode mode);
  void run_backward(std::vector<Hidden>& hidden, nn::Linear& out, const Mat& dy, Mat* dx);
  nn::NamedTensors named_tensors();

  CcvaeConfig config_;
  std::vector<Hidden> enc_;
  nn::Linear enc_out_;
  std::vector<Hidden> dec_;
  nn::Linear dec_out_;
  std::set<int> seen_;
  std::map<int, FeatureStats> stats_;
};

/// Draw z ~ N(0, I) and decode it under (task, s). Returns a UNet-space
/// feature (denormalized with the task's statistics). Throws InputError for
/// tasks the model has not been trained on.
Vec sample_pseudo_feature(const Ccvae& vae, int task, double s, std::uint64_t seed);

}  // namespace featreplay
