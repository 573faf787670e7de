#include "featreplay/artifacts.hpp"

#include "featreplay/errors.hpp"
#include "featreplay/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace featreplay {

std::string to_string(ArtifactKind kind) {
  switch (kind) {
    case ArtifactKind::BiasField: return "bias_field";
    case ArtifactKind::Ghosting: return "ghosting";
    case ArtifactKind::Spiking: return "spiking";
  }
  return "unknown";
}

ArtifactStrengths::ArtifactStrengths(int bias_order, double bias_coeff_range, int ghosts, int ghost_axis, double ghost_intensity,
                                     int spikes, double spike_amplitude)
    : bias_order_(bias_order),
      bias_coeff_range_(bias_coeff_range),
      ghosts_(ghosts),
      ghost_axis_(ghost_axis),
      ghost_intensity_(ghost_intensity),
      spikes_(spikes),
      spike_amplitude_(spike_amplitude) {
  if (bias_order < 1 || !(bias_coeff_range > 0.0)) throw ConfigError("bias field: order >= 1 and coeff_range > 0 required");
  if (ghosts < 1 || !(ghost_intensity > 0.0) || ghost_intensity > 1.0) throw ConfigError("ghosting: n_ghosts >= 1 and intensity in (0, 1] required");
  if (ghost_axis != 0 && ghost_axis != 1) throw ConfigError("ghosting: axis must be 0 or 1");
  if (spikes < 1 || !(spike_amplitude > 0.0)) throw ConfigError("spiking: n_spikes >= 1 and amplitude > 0 required");
}

namespace {

void require_finite(const Image2D& image, const char* op) {
  for (double v : image.pixels) {
    if (!std::isfinite(v)) throw InputError(std::string(op) + ": non-finite input");
  }
}

// 1D DFT of `n` strided samples; sign = -1 forward, +1 inverse (unscaled).
void dft1(std::complex<double>* data, int n, int stride, int sign, std::vector<std::complex<double>>& scratch) {
  scratch.assign(static_cast<std::size_t>(n), {0.0, 0.0});
  for (int k = 0; k < n; ++k) {
    std::complex<double> acc{0.0, 0.0};
    for (int j = 0; j < n; ++j) {
      // Reduce the phase index first so twiddles stay exact for large k*j.
      const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>((static_cast<long>(k) * j) % n) / n;
      acc += data[static_cast<std::ptrdiff_t>(j) * stride] * std::complex<double>(std::cos(angle), std::sin(angle));
    }
    scratch[static_cast<std::size_t>(k)] = acc;
  }
  for (int k = 0; k < n; ++k) data[static_cast<std::ptrdiff_t>(k) * stride] = scratch[static_cast<std::size_t>(k)];
}

void transform(Spectrum& s, int h, int w, int sign) {
  std::vector<std::complex<double>> scratch;
  for (int r = 0; r < h; ++r) dft1(s.data() + static_cast<std::ptrdiff_t>(r) * w, w, 1, sign, scratch);
  for (int c = 0; c < w; ++c) dft1(s.data() + c, h, w, sign, scratch);
}

Image2D real_part(const Spectrum& s, int h, int w) {
  Image2D out(h, w);
  for (std::size_t i = 0; i < s.size(); ++i) out.pixels[i] = s[i].real();
  return out;
}

}  // namespace

Spectrum dft2(const Image2D& image) {
  Spectrum s(image.pixels.begin(), image.pixels.end());
  transform(s, image.height, image.width, -1);
  return s;
}

Spectrum idft2(const Spectrum& spectrum, int height, int width) {
  Spectrum s = spectrum;
  transform(s, height, width, +1);
  const double scale = 1.0 / (static_cast<double>(height) * width);
  for (auto& v : s) v *= scale;
  return s;
}

Image2D apply_bias_field(const Image2D& image, int order, double coeff_range, std::uint64_t seed) {
  if (order < 1 || !(coeff_range > 0.0)) throw ConfigError("apply_bias_field: order >= 1 and coeff_range > 0 required");
  require_finite(image, "apply_bias_field");
  Rng rng(seed);
  std::vector<double> coeffs;
  for (int i = 0; i <= order; ++i) {
    for (int j = 0; j <= order - i; ++j) coeffs.push_back(rng.uniform(-coeff_range, coeff_range));
  }
  Image2D out = image;
  for (int y = 0; y < image.height; ++y) {
    const double yn = image.height > 1 ? 2.0 * y / (image.height - 1) - 1.0 : 0.0;
    for (int x = 0; x < image.width; ++x) {
      const double xn = image.width > 1 ? 2.0 * x / (image.width - 1) - 1.0 : 0.0;
      double p = 0.0;
      std::size_t k = 0;
      for (int i = 0; i <= order; ++i) {
        for (int j = 0; j <= order - i; ++j) p += coeffs[k++] * std::pow(xn, i) * std::pow(yn, j);
      }
      out.at(y, x) = image.at(y, x) * std::exp(p);
    }
  }
  return out;
}

Image2D apply_ghosting(const Image2D& image, int n_ghosts, int axis, double intensity, std::uint64_t seed) {
  if (axis != 0 && axis != 1) throw ConfigError("apply_ghosting: axis must be 0 or 1");
  if (n_ghosts < 1 || !(intensity > 0.0) || intensity > 1.0) throw ConfigError("apply_ghosting: n_ghosts >= 1 and intensity in (0, 1] required");
  require_finite(image, "apply_ghosting");
  const int period = n_ghosts + 1;
  Rng rng(seed);
  const int offset = static_cast<int>(rng.index(static_cast<std::uint64_t>(period)));
  Spectrum s = dft2(image);
  const double factor = 1.0 - intensity;
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      const int line = axis == 0 ? r : c;
      if (line == 0 || (line - offset) % period != 0) continue;
      s[static_cast<std::size_t>(r) * image.width + c] *= factor;
    }
  }
  return real_part(idft2(s, image.height, image.width), image.height, image.width);
}

std::vector<std::pair<int, int>> spike_coordinates(int height, int width, int n_spikes, std::uint64_t seed) {
  const long total = static_cast<long>(height) * width - 1;
  if (n_spikes > total) throw ConfigError("apply_spiking: more spikes than non-DC frequencies");
  Rng rng(seed);
  std::set<long> picked;
  std::vector<std::pair<int, int>> coords;
  while (static_cast<int>(coords.size()) < n_spikes) {
    const long flat = 1 + static_cast<long>(rng.index(static_cast<std::uint64_t>(total)));
    if (!picked.insert(flat).second) continue;
    coords.emplace_back(static_cast<int>(flat / width), static_cast<int>(flat % width));
  }
  return coords;
}

Image2D apply_spiking(const Image2D& image, int n_spikes, double amplitude, std::uint64_t seed) {
  if (n_spikes < 1 || !(amplitude > 0.0)) throw ConfigError("apply_spiking: n_spikes >= 1 and amplitude > 0 required");
  require_finite(image, "apply_spiking");
  Spectrum s = dft2(image);
  double peak = 0.0;
  for (const auto& v : s) peak = std::max(peak, std::abs(v));
  for (const auto& [r, c] : spike_coordinates(image.height, image.width, n_spikes, seed)) {
    s[static_cast<std::size_t>(r) * image.width + c] += amplitude * peak;
  }
  return real_part(idft2(s, image.height, image.width), image.height, image.width);
}

Volume apply_artifact(const Volume& v, ArtifactKind kind, const ArtifactStrengths& strengths, std::uint64_t seed) {
  Volume out = v;
  const int axis = slicing_axis(v.spacing);
  const int rows_axis = axis == 0 ? 1 : 0;
  const int cols_axis = axis == 2 ? 1 : 2;
  const int h = v.shape[rows_axis], w = v.shape[cols_axis];
  for (int k = 0; k < v.shape[axis]; ++k) {
    Image2D slice(h, w);
    auto index = [&](int r, int c) {
      std::array<int, 3> p{};
      p[axis] = k;
      p[rows_axis] = r;
      p[cols_axis] = c;
      return v.index(p[0], p[1], p[2]);
    };
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) slice.at(r, c) = v.voxels[index(r, c)];
    }
    Image2D result;
    switch (kind) {
      case ArtifactKind::BiasField:
        result = apply_bias_field(slice, strengths.bias_order(), strengths.bias_coeff_range(), seed);
        break;
      case ArtifactKind::Ghosting:
        result = apply_ghosting(slice, strengths.ghosts(), strengths.ghost_axis(), strengths.ghost_intensity(), seed);
        break;
      case ArtifactKind::Spiking:
        result = apply_spiking(slice, strengths.spikes(), strengths.spike_amplitude(), seed);
        break;
    }
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) out.voxels[index(r, c)] = static_cast<float>(result.at(r, c));
    }
  }
  out.is_artifact = true;
  out.subject_id = v.subject_id + "_" + to_string(kind);
  return out;
}

std::vector<AugmentedVolume> augment_test_set(const std::vector<Volume>& tests, const ArtifactStrengths& strengths, std::uint64_t seed) {
  if (tests.empty()) throw InputError("augment_test_set: empty test list");
  std::vector<AugmentedVolume> out;
  out.reserve(tests.size() * 2);
  for (const Volume& v : tests) out.push_back({v, false, ArtifactKind::BiasField});
  for (std::size_t i = 0; i < tests.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    const auto kind = static_cast<ArtifactKind>(rng.index(3));
    out.push_back({apply_artifact(tests[i], kind, strengths, rng.next_u64()), true, kind});
  }
  return out;
}

}  // namespace featreplay
