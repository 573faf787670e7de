#pragma once

#include "featreplay/datagen.hpp"

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace featreplay {

enum class ArtifactKind { BiasField, Ghosting, Spiking };

std::string to_string(ArtifactKind kind);

/// Severity of each artifact family. Validated on construction.
class ArtifactStrengths {
 public:
  ArtifactStrengths() : ArtifactStrengths(3, 0.5, 4, 0, 0.7, 2, 0.3) {}
  ArtifactStrengths(int bias_order, double bias_coeff_range, int ghosts, int ghost_axis, double ghost_intensity, int spikes,
                    double spike_amplitude);

  int bias_order() const { return bias_order_; }
  double bias_coeff_range() const { return bias_coeff_range_; }
  int ghosts() const { return ghosts_; }
  int ghost_axis() const { return ghost_axis_; }
  double ghost_intensity() const { return ghost_intensity_; }
  int spikes() const { return spikes_; }
  double spike_amplitude() const { return spike_amplitude_; }

 private:
  int bias_order_;
  double bias_coeff_range_;
  int ghosts_;
  int ghost_axis_;
  double ghost_intensity_;
  int spikes_;
  double spike_amplitude_;
};

using Spectrum = std::vector<std::complex<double>>;

/// Separable 2D discrete Fourier transform (row-major, any size).
Spectrum dft2(const Image2D& image);
/// Inverse of dft2 (includes the 1/(H*W) factor), complex result.
Spectrum idft2(const Spectrum& spectrum, int height, int width);

/// image * exp(P(x, y)) with P a random polynomial of total degree `order` over [-1, 1]^2.
Image2D apply_bias_field(const Image2D& image, int order, double coeff_range, std::uint64_t seed);

/// Attenuate every (n_ghosts+1)-th frequency line along `axis` by (1 - intensity), DC line excluded.
Image2D apply_ghosting(const Image2D& image, int n_ghosts, int axis, double intensity, std::uint64_t seed);

/// Add `n_spikes` impulses of size amplitude * max|F| at random distinct non-DC frequencies.
Image2D apply_spiking(const Image2D& image, int n_spikes, double amplitude, std::uint64_t seed);

/// Frequencies chosen by apply_spiking for the given shape and seed (row, col).
std::vector<std::pair<int, int>> spike_coordinates(int height, int width, int n_spikes, std::uint64_t seed);

struct AugmentedVolume {
  Volume volume;
  bool is_artifact = false;
  ArtifactKind kind = ArtifactKind::BiasField;  ///< meaningful when is_artifact
};

/// Originals followed by one artifact copy per volume (kind drawn uniformly, applied slice-wise).
std::vector<AugmentedVolume> augment_test_set(const std::vector<Volume>& tests, const ArtifactStrengths& strengths, std::uint64_t seed);

/// Apply one artifact to every slice of `v` along its slicing axis.
Volume apply_artifact(const Volume& v, ArtifactKind kind, const ArtifactStrengths& strengths, std::uint64_t seed);

}  // namespace featreplay
