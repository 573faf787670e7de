#pragma once

#include <cstdint>
#include <vector>

namespace featreplay {

/// Dice macro-averaged over foreground classes 1..classes-1. A class absent
/// from both masks scores 1. Throws InputError on a shape mismatch.
double dice(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt, int classes = 2);

/// Streaming expected calibration error with equal-width confidence bins.
class EceAccumulator {
 public:
  explicit EceAccumulator(int n_bins = 10);
  void add(double confidence, bool correct);
  /// Binary foreground probability p against a 0/1 label; prediction is p > 0.5.
  void add_binary(double p, std::uint8_t label);
  void merge(const EceAccumulator& other);
  std::int64_t count() const { return total_; }
  /// Sum over bins of (n_b / N) |acc_b - conf_b|; 0 when empty.
  double value() const;

 private:
  int n_bins_;
  std::vector<std::int64_t> n_;
  std::vector<double> conf_sum_;
  std::vector<double> correct_sum_;
  std::int64_t total_ = 0;
};

/// ECE of per-pixel foreground probabilities against binary labels, confidence max(p, 1-p).
double ece(const std::vector<double>& fg_probs, const std::vector<std::uint8_t>& gt, int n_bins = 10);

/// R[i][j]: Dice (percent) on task j after stage i. Rows may be longer than the stage count.
using Matrix = std::vector<std::vector<double>>;

/// Mean over tasks i < T-1 of R[T-1][i] - R[i][i], with T = number of stages.
double bwt(const Matrix& r);

/// Mean over tasks j >= 1 of R[j][j] - R_seq[j][j].
double fwt(const Matrix& r, const Matrix& r_seq);

/// Probability that a random positive outscores a random negative (ties count half).
double auroc(const std::vector<double>& negatives, const std::vector<double>& positives);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Mean and population standard deviation; zeros for an empty list.
MeanStd mean_std(const std::vector<double>& values);

}  // namespace featreplay
