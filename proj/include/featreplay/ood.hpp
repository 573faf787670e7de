#pragma once

#include "featreplay/cvae.hpp"
#include "featreplay/segmenter.hpp"

#include <map>
#include <string>
#include <vector>

namespace featreplay {

/// Per-task volume scores and their minimum (lower = more in-distribution).
struct TaskScores {
  std::map<int, double> per_task;
  double score = 0.0;
  int best_task = 0;
};

struct OodVerdict {
  std::string subject_id;
  double score = 0.0;
  double tau = 0.0;
  bool is_id = false;
  int best_task = 0;
  std::map<int, double> per_task_scores;
};

OodVerdict make_verdict(const std::string& subject_id, const TaskScores& scores, double tau);

/// Mean over slices of the normalized-feature MSE between u and the decoding of
/// its posterior mean, computed under each seen task's condition.
TaskScores reconstruction_score(const Ccvae& vae, const UNet2D& unet, const Volume& v, const std::vector<int>& tasks_seen);

/// Linear-interpolation percentile (rank q * (n - 1) over the sorted values), q in [0, 1].
double percentile_linear(std::vector<double> values, double q);

/// 95th-percentile threshold. Takes the larger of the interpolated percentile
/// and the ceil(0.95 n)-th order statistic, so at least 95% of the scores are
/// <= tau for every n. Throws StateError on an empty list, InputError below 5 scores.
double calibrate_threshold(const std::vector<double>& id_val_scores);

/// In-distribution iff score <= tau.
inline bool classify(double score, double tau) { return score <= tau; }

/// Diagonal Gaussian over posterior means.
struct DiagGaussian {
  Vec mean;
  Vec var;
};

/// Column mean and (biased) variance plus `var_floor`.
DiagGaussian fit_gaussian(const Mat& columns, double var_floor = 1e-6);
double mahalanobis_distance(const Vec& x, const DiagGaussian& g);

/// Posterior means of a volume's slices under condition task `t` (normalized space).
Mat posterior_means(const Ccvae& vae, const UNet2D& unet, const Volume& v, int task);

/// Per task: mean over slices of the distance of the posterior mean to that
/// task's Gaussian; score = min over tasks. Throws StateError for a missing Gaussian.
TaskScores mahalanobis_score(const Ccvae& vae, const UNet2D& unet, const Volume& v, const std::vector<int>& tasks_seen,
                             const std::map<int, DiagGaussian>& task_gaussians);

/// 1 - mean (over slices and pixels) of the per-pixel max class probability.
double max_softmax_score(const UNet2D& unet, const Volume& v);

}  // namespace featreplay
