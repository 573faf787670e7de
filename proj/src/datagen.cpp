#include "featreplay/datagen.hpp"

#include "featreplay/errors.hpp"
#include "featreplay/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace featreplay {

namespace fs = std::filesystem;

void Volume::validate(int max_label) const {
  const std::size_t n = size();
  if (shape[0] <= 0 || shape[1] <= 0 || shape[2] <= 0) throw InputError("volume " + subject_id + ": non-positive shape");
  if (voxels.size() != n || mask.size() != n) throw InputError("volume " + subject_id + ": voxel/mask shape mismatch");
  for (float v : voxels) {
    if (!std::isfinite(v)) throw InputError("volume " + subject_id + ": non-finite intensity");
  }
  for (std::uint8_t m : mask) {
    if (m > max_label) throw InputError("volume " + subject_id + ": mask label out of range");
  }
}

void DomainSpec::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (shape[i] <= 0) throw ConfigError("domain " + name + ": non-positive shape");
    if (!(spacing[i] > 0.0)) throw ConfigError("domain " + name + ": non-positive spacing");
    if (!(organ_axes_min[i] > 0.0) || organ_axes_min[i] > organ_axes_max[i]) {
      throw ConfigError("domain " + name + ": organ axis range invalid");
    }
    if (std::abs(organ_offset[i]) + center_jitter + organ_axes_max[i] > 1.0) {
      throw ConfigError("domain " + name + ": organ axes exceed the volume");
    }
    if (!(body_axes[i] > 0.0)) throw ConfigError("domain " + name + ": body axes must be positive");
  }
  if (center_jitter < 0.0 || deformation < 0.0 || deformation >= 1.0) throw ConfigError("domain " + name + ": bad jitter/deformation");
  if (!(gamma > 0.0) || contrast == 0.0) throw ConfigError("domain " + name + ": intensity transfer must be strictly monotone");
  if (noise_sigma < 0.0 || texture < 0.0) throw ConfigError("domain " + name + ": negative noise/texture");
}

namespace {

constexpr double kBackground = 0.0;
constexpr double kBody = 0.35;
constexpr double kDistractor = 0.6;
constexpr double kOrgan = 0.85;

struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> axes{};
  std::array<double, 7> harmonics{};
  double amplitude = 0.0;

  bool contains(double z, double y, double x) const {
    const double dz = (z - center[0]) / axes[0];
    const double dy = (y - center[1]) / axes[1];
    const double dx = (x - center[2]) / axes[2];
    const double rho = std::sqrt(dz * dz + dy * dy + dx * dx);
    if (rho < 1e-12) return true;
    const double uz = dz / rho, uy = dy / rho, ux = dx / rho;
    const double h = harmonics[0] * uz + harmonics[1] * uy + harmonics[2] * ux + harmonics[3] * uy * ux +
                     harmonics[4] * uz * uy + harmonics[5] * uz * ux + harmonics[6] * (uy * uy - ux * ux);
    return rho <= 1.0 + amplitude * h / 2.0;
  }
};

Volume generate_subject(const DomainSpec& spec, int index, std::uint64_t seed) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
  Volume v;
  v.shape = spec.shape;
  v.spacing = spec.spacing;
  v.domain_id = spec.name;
  v.subject_id = spec.name + "_" + std::to_string(index);
  v.voxels.assign(v.size(), 0.0f);
  v.mask.assign(v.size(), 0);

  std::array<double, 3> half{};
  for (int i = 0; i < 3; ++i) half[i] = 0.5 * spec.shape[i];

  Ellipsoid organ;
  organ.amplitude = spec.deformation;
  for (int i = 0; i < 3; ++i) {
    organ.center[i] = half[i] - 0.5 + half[i] * (spec.organ_offset[i] + spec.center_jitter * rng.uniform(-1.0, 1.0));
    organ.axes[i] = half[i] * rng.uniform(spec.organ_axes_min[i], spec.organ_axes_max[i]);
  }
  for (double& h : organ.harmonics) h = rng.uniform(-1.0, 1.0);

  Ellipsoid body;
  for (int i = 0; i < 3; ++i) {
    body.center[i] = half[i] - 0.5;
    body.axes[i] = half[i] * spec.body_axes[i] * rng.uniform(0.95, 1.05);
  }
  body.amplitude = 0.05;
  for (double& h : body.harmonics) h = rng.uniform(-1.0, 1.0);

  Ellipsoid blob;
  blob.center = {half[0] - 0.5, half[1] - 0.5 + half[1] * rng.uniform(-0.3, 0.3), half[2] - 0.5 + half[2] * 0.62};
  blob.axes = {half[0] * 0.6, half[1] * rng.uniform(0.12, 0.2), half[2] * rng.uniform(0.1, 0.16)};

  // Smooth texture: a few random low-frequency cosines.
  std::array<std::array<double, 5>, 3> waves{};
  for (auto& w : waves) {
    w = {rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.0, 2.0 * std::numbers::pi),
         rng.uniform(-1.0, 1.0)};
  }

  const std::array<double, 3> coil_point{organ.center[0], organ.center[1] + organ.axes[1] * 1.2, organ.center[2]};
  const double coil_radius = 0.3 * half[1];

  for (int z = 0; z < spec.shape[0]; ++z) {
    for (int y = 0; y < spec.shape[1]; ++y) {
      for (int x = 0; x < spec.shape[2]; ++x) {
        const std::size_t idx = v.index(z, y, x);
        double base = kBackground;
        bool foreground = false;
        if (body.contains(z, y, x)) {
          base = kBody;
          for (const auto& w : waves) {
            base += spec.texture * w[4] *
                    std::cos(w[0] * z / half[0] + w[1] * y / half[1] * std::numbers::pi + w[2] * x / half[2] * std::numbers::pi + w[3]);
          }
          if (spec.distractor && blob.contains(z, y, x)) base = kDistractor;
          if (organ.contains(z, y, x)) {
            base = kOrgan;
            foreground = true;
          }
        }
        double value = spec.brightness + spec.contrast * std::pow(std::max(base, 0.0), spec.gamma);
        if (spec.coil) {
          const double dz = (z - coil_point[0]) * spec.spacing[0] / spec.spacing[1];
          const double dy = y - coil_point[1];
          const double dx = x - coil_point[2];
          const double halo = std::exp(-(dz * dz + dy * dy + dx * dx) / (2.0 * coil_radius * coil_radius));
          value += spec.coil_delta * ((foreground ? 1.0 : 0.0) + halo);
        }
        value += spec.noise_sigma * rng.normal();
        v.voxels[idx] = static_cast<float>(value);
        v.mask[idx] = foreground ? 1 : 0;
      }
    }
  }
  // Deformation can never empty the mask: the organ center is always inside.
  return v;
}

}  // namespace

TaskDataset generate_domain_dataset(const DomainSpec& spec, int n_subjects, std::uint64_t seed) {
  spec.validate();
  if (n_subjects < 5) throw ConfigError("generate_domain_dataset: need at least 5 subjects");
  TaskDataset ds;
  ds.name = spec.name;
  ds.subjects.reserve(static_cast<std::size_t>(n_subjects));
  for (int i = 0; i < n_subjects; ++i) ds.subjects.push_back(generate_subject(spec, i, seed));
  return ds;
}

SplitCounts split_counts(int n) {
  if (n < 5) throw SplitError("split_dataset: need at least 5 subjects, got " + std::to_string(n));
  SplitCounts c;
  c.test = static_cast<int>(std::lround(0.20 * n));
  c.val = static_cast<int>(std::lround(0.24 * n));
  c.train = n - c.test - c.val;
  return c;
}

TaskDataset split_dataset(TaskDataset dataset, std::uint64_t seed) {
  std::vector<Volume> pool = std::move(dataset.subjects);
  if (pool.empty()) {
    for (auto* part : {&dataset.train, &dataset.val, &dataset.test}) {
      for (auto& v : *part) pool.push_back(std::move(v));
    }
  }
  dataset.subjects.clear();
  dataset.train.clear();
  dataset.val.clear();
  dataset.test.clear();

  const SplitCounts counts = split_counts(static_cast<int>(pool.size()));
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  for (std::size_t k = 0; k < order.size(); ++k) {
    Volume& v = pool[order[k]];
    if (k < static_cast<std::size_t>(counts.train)) {
      dataset.train.push_back(std::move(v));
    } else if (k < static_cast<std::size_t>(counts.train + counts.val)) {
      dataset.val.push_back(std::move(v));
    } else {
      dataset.test.push_back(std::move(v));
    }
  }
  return dataset;
}

int slicing_axis(const std::array<double, 3>& spacing) {
  int axis = 0;
  for (int i = 1; i < 3; ++i) {
    if (spacing[i] > spacing[axis]) axis = i;
  }
  return axis;
}

namespace {

struct SliceLayout {
  int axis;
  int count;
  int rows_axis;
  int cols_axis;
  int src_rows;
  int src_cols;
};

SliceLayout layout_of(const Volume& v) {
  SliceLayout l{};
  l.axis = slicing_axis(v.spacing);
  l.count = v.shape[l.axis];
  l.rows_axis = l.axis == 0 ? 1 : 0;
  l.cols_axis = l.axis == 2 ? 1 : 2;
  l.src_rows = v.shape[l.rows_axis];
  l.src_cols = v.shape[l.cols_axis];
  return l;
}

std::size_t voxel_index(const Volume& v, const SliceLayout& l, int k, int r, int c) {
  std::array<int, 3> p{};
  p[l.axis] = k;
  p[l.rows_axis] = r;
  p[l.cols_axis] = c;
  return v.index(p[0], p[1], p[2]);
}

}  // namespace

std::vector<SliceSample> slice_volume(const Volume& v, int task, int height, int width) {
  const SliceLayout l = layout_of(v);
  // Center crop (positive offset) or pad (negative offset).
  const int off_r = (l.src_rows - height) / 2;
  const int off_c = (l.src_cols - width) / 2;
  std::vector<SliceSample> out;
  out.reserve(static_cast<std::size_t>(l.count));
  for (int k = 0; k < l.count; ++k) {
    SliceSample s;
    s.image = Image2D(height, width, 0.0);
    s.mask.assign(static_cast<std::size_t>(height) * width, 0);
    s.s = l.count > 1 ? static_cast<double>(k) / (l.count - 1) : 0.5;
    s.task = task;
    s.subject_id = v.subject_id;
    for (int r = 0; r < height; ++r) {
      const int sr = r + off_r;
      if (sr < 0 || sr >= l.src_rows) continue;
      for (int c = 0; c < width; ++c) {
        const int sc = c + off_c;
        if (sc < 0 || sc >= l.src_cols) continue;
        const std::size_t idx = voxel_index(v, l, k, sr, sc);
        s.image.at(r, c) = v.voxels[idx];
        s.mask[static_cast<std::size_t>(r) * width + c] = v.mask[idx];
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::uint8_t> restack_slices(const Volume& v, const std::vector<std::vector<std::uint8_t>>& slices, int height, int width) {
  const SliceLayout l = layout_of(v);
  if (static_cast<int>(slices.size()) != l.count) throw InputError("restack_slices: slice count mismatch");
  const int off_r = (l.src_rows - height) / 2;
  const int off_c = (l.src_cols - width) / 2;
  std::vector<std::uint8_t> out(v.size(), 0);
  for (int k = 0; k < l.count; ++k) {
    for (int r = 0; r < height; ++r) {
      const int sr = r + off_r;
      if (sr < 0 || sr >= l.src_rows) continue;
      for (int c = 0; c < width; ++c) {
        const int sc = c + off_c;
        if (sc < 0 || sc >= l.src_cols) continue;
        out[voxel_index(v, l, k, sr, sc)] = slices[static_cast<std::size_t>(k)][static_cast<std::size_t>(r) * width + c];
      }
    }
  }
  return out;
}

std::int64_t feature_dimension(const std::vector<int>& spatial, int channels) {
  std::int64_t d = channels;
  for (int s : spatial) d *= s;
  return d;
}

std::int64_t slicewise_feature_dimension(const std::vector<int>& spatial, int channels, int sliced_axis) {
  if (sliced_axis < 0 || sliced_axis >= static_cast<int>(spatial.size())) throw ConfigError("sliced axis out of range");
  std::vector<int> rest;
  for (int i = 0; i < static_cast<int>(spatial.size()); ++i) {
    if (i != sliced_axis) rest.push_back(spatial[static_cast<std::size_t>(i)]);
  }
  return feature_dimension(rest, channels);
}

void write_volume(const Volume& v, const fs::path& dir, const std::string& stem) {
  v.validate();
  fs::create_directories(dir);
  const std::string voxel_file = stem + ".raw";
  const std::string mask_file = stem + "_mask.raw";
  {
    std::ofstream out(dir / voxel_file, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(v.voxels.data()), static_cast<std::streamsize>(v.voxels.size() * sizeof(float)));
  }
  {
    std::ofstream out(dir / mask_file, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(v.mask.data()), static_cast<std::streamsize>(v.mask.size()));
  }
  nlohmann::json side;
  side["shape"] = v.shape;
  side["spacing"] = v.spacing;
  side["voxel_file"] = voxel_file;
  side["mask_file"] = mask_file;
  side["domain_id"] = v.domain_id;
  side["subject_id"] = v.subject_id;
  side["is_artifact"] = v.is_artifact;
  std::ofstream out(dir / (stem + ".json"), std::ios::trunc);
  out << side.dump(2) << '\n';
}

Volume read_volume(const fs::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) throw InputError("cannot open sidecar " + sidecar.string());
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed sidecar " + sidecar.string() + ": " + e.what());
  }
  Volume v;
  try {
    v.shape = side.at("shape").get<std::array<int, 3>>();
    v.spacing = side.at("spacing").get<std::array<double, 3>>();
    v.domain_id = side.value("domain_id", "");
    v.subject_id = side.value("subject_id", sidecar.stem().string());
    v.is_artifact = side.value("is_artifact", false);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("sidecar " + sidecar.string() + ": " + e.what());
  }
  const fs::path dir = sidecar.parent_path();
  const std::string voxel_file = side.value("voxel_file", sidecar.stem().string() + ".raw");
  const std::string mask_file = side.value("mask_file", sidecar.stem().string() + "_mask.raw");

  v.voxels.resize(v.size());
  v.mask.resize(v.size());
  std::ifstream vin(dir / voxel_file, std::ios::binary);
  if (!vin) throw InputError("missing voxel file " + (dir / voxel_file).string());
  vin.read(reinterpret_cast<char*>(v.voxels.data()), static_cast<std::streamsize>(v.voxels.size() * sizeof(float)));
  if (vin.gcount() != static_cast<std::streamsize>(v.voxels.size() * sizeof(float))) throw InputError("short voxel file " + voxel_file);
  std::ifstream min(dir / mask_file, std::ios::binary);
  if (!min) throw InputError("missing mask file " + (dir / mask_file).string());
  min.read(reinterpret_cast<char*>(v.mask.data()), static_cast<std::streamsize>(v.mask.size()));
  if (min.gcount() != static_cast<std::streamsize>(v.mask.size())) throw InputError("short mask file " + mask_file);
  v.validate();
  return v;
}

std::vector<Volume> read_volume_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::vector<fs::path> sidecars;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") sidecars.push_back(entry.path());
  }
  std::sort(sidecars.begin(), sidecars.end());
  std::vector<Volume> out;
  for (const auto& p : sidecars) out.push_back(read_volume(p));
  return out;
}

}  // namespace featreplay
