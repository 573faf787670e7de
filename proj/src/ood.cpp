#include "featreplay/ood.hpp"

#include "featreplay/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace featreplay {

namespace {

FeatureBatch volume_batch(const Ccvae& vae, const UNet2D& unet, const Volume& v, int task) {
  const UNetConfig& cfg = unet.config();
  const auto slices = slice_volume(v, task, cfg.height, cfg.width);
  FeatureBatch batch;
  for (const auto& s : slices) {
    batch.tasks.push_back(task);
    batch.slices.push_back(s.s);
  }
  batch.features = vae.normalize(unet.encode_features(slices), batch.tasks);
  return batch;
}

void require_trained(const Ccvae& vae, const std::vector<int>& tasks_seen) {
  if (tasks_seen.empty()) throw StateError("OoD scoring: no tasks seen");
  for (int t : tasks_seen) {
    if (!vae.seen_tasks().contains(t)) throw StateError("OoD scoring: VAE not trained on task " + std::to_string(t));
    if (!vae.has_stats(t)) throw StateError("OoD scoring: no feature statistics for task " + std::to_string(t));
  }
}

TaskScores finish(std::map<int, double> per_task) {
  TaskScores out;
  out.per_task = std::move(per_task);
  out.score = std::numeric_limits<double>::infinity();
  for (const auto& [t, s] : out.per_task) {
    if (s < out.score) {
      out.score = s;
      out.best_task = t;
    }
  }
  return out;
}

}  // namespace

OodVerdict make_verdict(const std::string& subject_id, const TaskScores& scores, double tau) {
  return {subject_id, scores.score, tau, classify(scores.score, tau), scores.best_task, scores.per_task};
}

TaskScores reconstruction_score(const Ccvae& vae, const UNet2D& unet, const Volume& v, const std::vector<int>& tasks_seen) {
  require_trained(vae, tasks_seen);
  const UNetConfig& cfg = unet.config();
  const auto slices = slice_volume(v, tasks_seen.front(), cfg.height, cfg.width);
  const Mat raw = unet.encode_features(slices);
  FeatureBatch batch;
  for (const auto& s : slices) batch.slices.push_back(s.s);
  std::map<int, double> per_task;
  for (int t : tasks_seen) {
    batch.tasks.assign(slices.size(), t);
    batch.features = vae.normalize(raw, batch.tasks);
    per_task[t] = vae.reconstruction_errors(batch).mean();
  }
  return finish(std::move(per_task));
}

double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw StateError("percentile of an empty list");
  if (!(q >= 0.0 && q <= 1.0)) throw InputError("percentile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double rank = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (rank - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double calibrate_threshold(const std::vector<double>& id_val_scores) {
  if (id_val_scores.empty()) throw StateError("calibrate_threshold: no validation scores");
  if (id_val_scores.size() < 5) throw InputError("calibrate_threshold: need at least 5 validation scores");
  for (double s : id_val_scores) {
    if (!std::isfinite(s)) throw InputError("calibrate_threshold: non-finite score");
  }
  std::vector<double> sorted = id_val_scores;
  std::sort(sorted.begin(), sorted.end());
  // Exact integer ceil(0.95 n) = ceil(19 n / 20).
  const std::size_t rank = (19 * sorted.size() + 19) / 20;
  const double order_stat = sorted[std::max<std::size_t>(rank, 1) - 1];
  return std::max(percentile_linear(sorted, 0.95), order_stat);
}

DiagGaussian fit_gaussian(const Mat& columns, double var_floor) {
  if (columns.cols() < 1) throw InputError("fit_gaussian: no samples");
  DiagGaussian g;
  g.mean = columns.rowwise().mean();
  const Mat centered = columns.colwise() - g.mean;
  g.var = (centered.array().square().rowwise().mean() + var_floor).matrix();
  return g;
}

double mahalanobis_distance(const Vec& x, const DiagGaussian& g) {
  if (x.size() != g.mean.size() || g.var.size() != g.mean.size()) throw InputError("mahalanobis_distance: width mismatch");
  return std::sqrt(((x - g.mean).array().square() / g.var.array()).sum());
}

Mat posterior_means(const Ccvae& vae, const UNet2D& unet, const Volume& v, int task) {
  return vae.encode_batch(volume_batch(vae, unet, v, task)).first;
}

TaskScores mahalanobis_score(const Ccvae& vae, const UNet2D& unet, const Volume& v, const std::vector<int>& tasks_seen,
                             const std::map<int, DiagGaussian>& task_gaussians) {
  require_trained(vae, tasks_seen);
  std::map<int, double> per_task;
  for (int t : tasks_seen) {
    const auto it = task_gaussians.find(t);
    if (it == task_gaussians.end()) throw StateError("mahalanobis_score: no Gaussian for task " + std::to_string(t));
    const Mat mu = posterior_means(vae, unet, v, t);
    double total = 0.0;
    for (Eigen::Index k = 0; k < mu.cols(); ++k) total += mahalanobis_distance(mu.col(k), it->second);
    per_task[t] = total / static_cast<double>(mu.cols());
  }
  return finish(std::move(per_task));
}

double max_softmax_score(const UNet2D& unet, const Volume& v) {
  const auto maps = unet.predict_volume(v);
  double total = 0.0;
  Eigen::Index count = 0;
  for (const auto& p : maps) {
    total += p.colwise().maxCoeff().sum();
    count += p.cols();
  }
  if (count == 0) throw InputError("max_softmax_score: empty volume");
  return 1.0 - total / static_cast<double>(count);
}

}  // namespace featreplay
