#include "featreplay/metrics.hpp"

#include "featreplay/errors.hpp"

#include <algorithm>
#include <cmath>

namespace featreplay {

double dice(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt, int classes) {
  if (pred.size() != gt.size()) throw InputError("dice: shape mismatch");
  if (classes < 2) throw InputError("dice: need at least one foreground class");
  double total = 0.0;
  for (int c = 1; c < classes; ++c) {
    std::int64_t a = 0, b = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool in_a = pred[i] == c, in_b = gt[i] == c;
      a += in_a;
      b += in_b;
      both += in_a && in_b;
    }
    total += a + b == 0 ? 1.0 : 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
  }
  return total / (classes - 1);
}

EceAccumulator::EceAccumulator(int n_bins) : n_bins_(n_bins), n_(n_bins, 0), conf_sum_(n_bins, 0.0), correct_sum_(n_bins, 0.0) {
  if (n_bins < 1) throw InputError("ece: need at least one bin");
}

void EceAccumulator::add(double confidence, bool correct) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) throw InputError("ece: confidence outside [0, 1]");
  const int bin = std::min(static_cast<int>(std::floor(confidence * n_bins_)), n_bins_ - 1);
  ++n_[bin];
  conf_sum_[bin] += confidence;
  correct_sum_[bin] += correct ? 1.0 : 0.0;
  ++total_;
}

void EceAccumulator::add_binary(double p, std::uint8_t label) {
  if (!(p >= 0.0 && p <= 1.0)) throw InputError("ece: probability outside [0, 1]");
  const bool pred_fg = p > 0.5;
  add(std::max(p, 1.0 - p), pred_fg == (label != 0));
}

void EceAccumulator::merge(const EceAccumulator& other) {
  if (other.n_bins_ != n_bins_) throw InputError("ece: bin count mismatch");
  for (int b = 0; b < n_bins_; ++b) {
    n_[b] += other.n_[b];
    conf_sum_[b] += other.conf_sum_[b];
    correct_sum_[b] += other.correct_sum_[b];
  }
  total_ += other.total_;
}

double EceAccumulator::value() const {
  if (total_ == 0) return 0.0;
  double out = 0.0;
  for (int b = 0; b < n_bins_; ++b) {
    if (n_[b] == 0) continue;
    const double n = static_cast<double>(n_[b]);
    out += (n / static_cast<double>(total_)) * std::abs(correct_sum_[b] / n - conf_sum_[b] / n);
  }
  return out;
}

double ece(const std::vector<double>& fg_probs, const std::vector<std::uint8_t>& gt, int n_bins) {
  if (fg_probs.size() != gt.size()) throw InputError("ece: shape mismatch");
  EceAccumulator acc(n_bins);
  for (std::size_t i = 0; i < gt.size(); ++i) acc.add_binary(fg_probs[i], gt[i]);
  return acc.value();
}

double bwt(const Matrix& r) {
  const std::size_t stages = r.size();
  if (stages < 2) throw InputError("bwt: need at least two stages");
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < stages; ++i) {
    if (r[i].size() <= i || r.back().size() <= i) throw InputError("bwt: incomplete result matrix");
    total += r.back()[i] - r[i][i];
  }
  return total / static_cast<double>(stages - 1);
}

double fwt(const Matrix& r, const Matrix& r_seq) {
  if (r_seq.empty()) throw StateError("fwt: missing sequential reference");
  const std::size_t stages = r.size();
  if (stages < 2) throw InputError("fwt: need at least two stages");
  if (r_seq.size() < stages) throw InputError("fwt: reference shorter than the trajectory");
  double total = 0.0;
  for (std::size_t j = 1; j < stages; ++j) {
    if (r[j].size() <= j || r_seq[j].size() <= j) throw InputError("fwt: incomplete result matrix");
    total += r[j][j] - r_seq[j][j];
  }
  return total / static_cast<double>(stages - 1);
}

double auroc(const std::vector<double>& negatives, const std::vector<double>& positives) {
  if (negatives.empty() || positives.empty()) throw InputError("auroc: need both classes");
  double wins = 0.0;
  for (double p : positives) {
    for (double n : negatives) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  }
  return wins / (static_cast<double>(negatives.size()) * static_cast<double>(positives.size()));
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) return {};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

}  // namespace featreplay
