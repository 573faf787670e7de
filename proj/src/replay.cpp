#include "featreplay/replay.hpp"

#include "featreplay/errors.hpp"

#include <algorithm>
#include <string>

namespace featreplay {

std::size_t Memory::count(int task) const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [task](const MemoryEntry& e) { return e.task == task; }));
}

std::vector<double> slice_grid(int points) {
  if (points < 1) throw ConfigError("slice_grid: need at least one point");
  if (points == 1) return {0.5};
  std::vector<double> grid(static_cast<std::size_t>(points));
  for (int g = 0; g < points; ++g) grid[static_cast<std::size_t>(g)] = static_cast<double>(g) / (points - 1);
  return grid;
}

Memory build_memory(const Ccvae& vae, const UNet2D& unet, const std::vector<int>& tasks_seen, int size_per_task, std::uint64_t seed,
                    int grid_points) {
  if (size_per_task < 0) throw ConfigError("build_memory: negative size_per_task");
  for (int t : tasks_seen) {
    if (!vae.seen_tasks().contains(t)) throw StateError("build_memory: VAE has not been trained on task " + std::to_string(t));
    if (!vae.has_stats(t)) throw StateError("build_memory: no feature statistics for task " + std::to_string(t));
  }
  Memory memory;
  memory.capacity_per_task = size_per_task;
  if (size_per_task == 0) return memory;
  const std::vector<double> grid = slice_grid(std::max(grid_points, 8));
  const int d = vae.config().latent_dim();
  for (int t : tasks_seen) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    std::vector<double> order = grid;
    std::vector<double> slices(static_cast<std::size_t>(size_per_task));
    for (int i = 0; i < size_per_task; ++i) {
      if (i % static_cast<int>(grid.size()) == 0) rng.shuffle(order);
      slices[static_cast<std::size_t>(i)] = order[static_cast<std::size_t>(i) % order.size()];
    }
    Mat z(d, size_per_task);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
    const std::vector<int> tasks(static_cast<std::size_t>(size_per_task), t);
    const Mat u = vae.denormalize(vae.decode_batch(z, tasks, slices), tasks);
    std::vector<ProbabilityMap> labels = unet.decode_without_skips(u);
    for (int i = 0; i < size_per_task; ++i) {
      memory.entries.push_back({u.col(i), std::move(labels[static_cast<std::size_t>(i)]), t, slices[static_cast<std::size_t>(i)]});
    }
  }
  return memory;
}

Mat pseudo_label(const UNet2D& unet, const Vec& u) {
  if (u.size() != unet.feature_dim()) throw InputError("pseudo_label: feature width mismatch");
  return unet.decode_without_skips(Mat(u)).front();
}

void flush_memory(Memory& memory) {
  memory.entries.clear();
  memory.entries.shrink_to_fit();
}

}  // namespace featreplay
