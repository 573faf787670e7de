#pragma once

#include "featreplay/cvae.hpp"
#include "featreplay/segmenter.hpp"

#include <cstdint>
#include <vector>

namespace featreplay {

struct MemoryEntry {
  Vec u;             ///< generated feature in UNet space
  Mat soft_label;    ///< classes x (H*W), columns sum to 1
  int task = 0;
  double s = 0.5;
};

/// In-process buffer of pseudo-features. Never serialized.
struct Memory {
  std::vector<MemoryEntry> entries;
  int capacity_per_task = 0;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  std::size_t count(int task) const;
};

/// Slice-position grid used for memory sampling: `points` evenly spaced values in [0, 1].
std::vector<double> slice_grid(int points);

/// Sample `size_per_task` pseudo-features per seen task and label them with
/// the decoder (no skips). Slice positions walk a shuffled grid of
/// max(grid_points, 8) strata round-robin. Throws StateError when the VAE has
/// not been trained on one of `tasks_seen`.
Memory build_memory(const Ccvae& vae, const UNet2D& unet, const std::vector<int>& tasks_seen, int size_per_task, std::uint64_t seed,
                    int grid_points = 8);

/// Soft label of one UNet-space feature: decode with zero skips.
Mat pseudo_label(const UNet2D& unet, const Vec& u);

/// Drop every entry (and release its storage).
void flush_memory(Memory& memory);

}  // namespace featreplay
