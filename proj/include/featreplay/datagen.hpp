#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace featreplay {

/// 2D scalar image, row-major.
struct Image2D {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image2D() = default;
  Image2D(int h, int w, double fill = 0.0) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// 3D scalar image with a label mask. Shape is (D, H, W); spacing is mm per voxel along the same axes.
struct Volume {
  std::array<int, 3> shape{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<float> voxels;
  std::vector<std::uint8_t> mask;
  std::string subject_id;
  std::string domain_id;
  bool is_artifact = false;

  std::size_t size() const { return static_cast<std::size_t>(shape[0]) * shape[1] * shape[2]; }
  std::size_t index(int z, int y, int x) const { return (static_cast<std::size_t>(z) * shape[1] + y) * shape[2] + x; }

  /// Throws InputError when shapes disagree, labels exceed `max_label` or intensities are non-finite.
  void validate(int max_label = 255) const;
};

/// One 2D training slice.
struct SliceSample {
  Image2D image;
  std::vector<std::uint8_t> mask;
  double s = 0.5;  ///< normalized slice position k/(K-1)
  int task = 0;
  std::string subject_id;
};

struct TaskDataset {
  std::string name;
  std::vector<Volume> subjects;  ///< unsplit pool, emptied by split_dataset
  std::vector<Volume> train;
  std::vector<Volume> val;
  std::vector<Volume> test;
};

struct TaskStream {
  std::string name;
  std::vector<TaskDataset> tasks;  ///< training order
  bool has_ood_task = false;
  TaskDataset ood_task;  ///< held-out domain, every subject in `test`
};

/// Procedural domain: a randomly deformed ellipsoidal organ inside a body
/// ellipsoid, passed through a monotone intensity transfer and Gaussian noise.
/// Geometry fractions are relative to each axis' half-extent.
struct DomainSpec {
  std::string name = "domain";
  std::array<int, 3> shape{12, 32, 32};
  std::array<double, 3> spacing{3.0, 1.0, 1.0};

  std::array<double, 3> organ_offset{0.0, 0.0, -0.15};
  double center_jitter = 0.1;
  std::array<double, 3> organ_axes_min{0.55, 0.30, 0.28};
  std::array<double, 3> organ_axes_max{0.80, 0.45, 0.42};
  double deformation = 0.15;
  std::array<double, 3> body_axes{1.3, 0.88, 0.9};
  bool distractor = true;
  double texture = 0.05;

  double gamma = 1.0;
  double contrast = 1.0;
  double brightness = 0.0;
  double noise_sigma = 0.04;

  bool coil = false;
  double coil_delta = 0.3;

  /// Throws ConfigError on non-positive shape/spacing or an organ that cannot fit.
  void validate() const;
};

/// Generate `n_subjects` volumes into TaskDataset::subjects. Pure in (spec, n_subjects, seed).
TaskDataset generate_domain_dataset(const DomainSpec& spec, int n_subjects, std::uint64_t seed);

struct SplitCounts {
  int train = 0;
  int val = 0;
  int test = 0;
};

/// 56/24/20 split sizes: test and val rounded, remainder to train.
SplitCounts split_counts(int n_subjects);

/// Partition `dataset.subjects` (or, if empty, the union of existing splits) into train/val/test.
TaskDataset split_dataset(TaskDataset dataset, std::uint64_t seed);

/// Axis with the largest spacing (lowest resolution), ties to the lowest index.
int slicing_axis(const std::array<double, 3>& spacing);

/// Slice along the lowest-resolution axis, center-cropping/padding each slice to (height, width).
std::vector<SliceSample> slice_volume(const Volume& v, int task, int height, int width);

/// Inverse of slice_volume's crop/pad for per-slice label maps; returns a mask shaped like `v`.
std::vector<std::uint8_t> restack_slices(const Volume& v, const std::vector<std::vector<std::uint8_t>>& slices, int height, int width);

/// Flattened size of a feature tensor.
std::int64_t feature_dimension(const std::vector<int>& spatial, int channels);

/// Flattened size after slicing away one spatial axis (2D counterpart of a 3D bottleneck).
std::int64_t slicewise_feature_dimension(const std::vector<int>& spatial, int channels, int sliced_axis);

// Raw ingestion format: little-endian float32 voxels + uint8 mask + JSON sidecar.
void write_volume(const Volume& v, const std::filesystem::path& dir, const std::string& stem);
Volume read_volume(const std::filesystem::path& sidecar);
/// Every *.json sidecar in `dir`, sorted by file name.
std::vector<Volume> read_volume_dir(const std::filesystem::path& dir);

}  // namespace featreplay
