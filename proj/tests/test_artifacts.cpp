#include "featreplay/artifacts.hpp"
#include "featreplay/errors.hpp"
#include "featreplay/experiment.hpp"

#include "test_support.hpp"

#include <complex>
#include <numbers>
#include <set>

using namespace featreplay;

namespace {

// Direct O(N^4) transform, independent of the separable implementation.
std::vector<std::complex<double>> naive_dft(const Image2D& img) {
  const int h = img.height, w = img.width;
  std::vector<std::complex<double>> out(static_cast<std::size_t>(h) * w);
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      std::complex<double> acc;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double a = -2.0 * std::numbers::pi * (static_cast<double>(u * y) / h + static_cast<double>(v * x) / w);
          acc += img.at(y, x) * std::complex<double>(std::cos(a), std::sin(a));
        }
      }
      out[static_cast<std::size_t>(u) * w + v] = acc;
    }
  }
  return out;
}

double max_abs_diff(const Image2D& a, const Image2D& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
  return m;
}

double pixel_sum(const Image2D& a) {
  double s = 0.0;
  for (double v : a.pixels) s += v;
  return s;
}

}  // namespace

TEST_CASE("dft2 agrees with the direct transform and inverts") {
  const Image2D img = testing::disc_image(12, 10);
  const Spectrum s = dft2(img);
  const auto ref = naive_dft(img);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(s[i] - ref[i]) < 1e-9);
  const Spectrum back = idft2(s, 12, 10);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(std::abs(back[i].real() - img.pixels[i]) < 1e-12);
    CHECK(std::abs(back[i].imag()) < 1e-12);
  }
}

TEST_CASE("bias field") {
  const Image2D img = testing::disc_image();
  SUBCASE("vanishing coefficients leave the image unchanged") {
    CHECK(max_abs_diff(apply_bias_field(img, 3, 1e-14, 5), img) < 1e-12);
  }
  SUBCASE("the multiplicative field is strictly positive") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Image2D out = apply_bias_field(img, 3, 0.5, seed);
      for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(out.pixels[i] / img.pixels[i] > 0.0);
    }
  }
  SUBCASE("golden") {
    testing::check_golden("bias_field_o3_c0.5_s11", apply_bias_field(img, 3, 0.5, 11).pixels);
  }
  CHECK_THROWS_AS(apply_bias_field(img, 0, 0.5, 1), ConfigError);
  CHECK_THROWS_AS(apply_bias_field(img, 3, 0.0, 1), ConfigError);
}

TEST_CASE("ghosting") {
  const Image2D img = testing::disc_image();
  SUBCASE("vanishing intensity leaves the image unchanged") {
    CHECK(max_abs_diff(apply_ghosting(img, 4, 0, 1e-12, 3), img) < 1e-6);
  }
  SUBCASE("DC component is preserved") {
    for (int axis : {0, 1}) {
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Image2D out = apply_ghosting(img, 4, axis, 0.7, seed);
        CHECK(pixel_sum(out) == doctest::Approx(pixel_sum(img)).epsilon(1e-12));
      }
    }
  }
  SUBCASE("only the selected frequency lines change") {
    const Image2D out = apply_ghosting(img, 4, 1, 0.7, 6);
    const auto fin = naive_dft(img), fout = naive_dft(out);
    std::set<int> changed;
    for (int u = 0; u < 32; ++u) {
      for (int v = 0; v < 32; ++v) {
        const auto i = static_cast<std::size_t>(u) * 32 + v;
        if (std::abs(fout[i] - fin[i]) > 1e-9 * (1.0 + std::abs(fin[i]))) changed.insert(v);
      }
    }
    CHECK_FALSE(changed.contains(0));
    CHECK_FALSE(changed.empty());
    // Some phase offset explains every changed column (directly or via its conjugate).
    bool explained = false;
    for (int offset = 0; offset < 5 && !explained; ++offset) {
      explained = true;
      for (int v : changed) explained = explained && ((v - offset) % 5 == 0 || ((32 - v) - offset) % 5 == 0);
    }
    CHECK(explained);
  }
  SUBCASE("golden") {
    testing::check_golden("ghosting_n4_i0.7_s11", apply_ghosting(img, 4, 0, 0.7, 11).pixels);
  }
  CHECK_THROWS_AS(apply_ghosting(img, 0, 0, 0.5, 1), ConfigError);
  CHECK_THROWS_AS(apply_ghosting(img, 4, 0, 1.5, 1), ConfigError);
  CHECK_THROWS_AS(apply_ghosting(img, 4, 2, 0.5, 1), ConfigError);
}

TEST_CASE("spiking") {
  const Image2D img = testing::disc_image();
  SUBCASE("vanishing amplitude leaves the image unchanged") {
    CHECK(max_abs_diff(apply_spiking(img, 2, 1e-12, 4), img) < 1e-6);
  }
  SUBCASE("the difference lives on the spike frequencies and their conjugates") {
    const std::uint64_t seed = 21;
    const Image2D out = apply_spiking(img, 2, 0.3, seed);
    Image2D diff(32, 32);
    for (std::size_t i = 0; i < diff.pixels.size(); ++i) diff.pixels[i] = out.pixels[i] - img.pixels[i];
    const auto f = naive_dft(diff);
    std::set<std::pair<int, int>> expected;
    for (auto [r, c] : spike_coordinates(32, 32, 2, seed)) {
      expected.insert({r, c});
      expected.insert({(32 - r) % 32, (32 - c) % 32});
    }
    double peak = 0.0;
    for (const auto& z : f) peak = std::max(peak, std::abs(z));
    for (int u = 0; u < 32; ++u) {
      for (int v = 0; v < 32; ++v) {
        const bool nonzero = std::abs(f[static_cast<std::size_t>(u) * 32 + v]) > 1e-9 * peak;
        CHECK(nonzero == expected.contains({u, v}));
      }
    }
  }
  SUBCASE("golden") {
    testing::check_golden("spiking_n2_a0.3_s11", apply_spiking(img, 2, 0.3, 11).pixels);
  }
  CHECK_THROWS_AS(apply_spiking(img, 0, 0.3, 1), ConfigError);
}

TEST_CASE("artifact strengths are validated on construction") {
  CHECK_NOTHROW(ArtifactStrengths{});
  CHECK_THROWS_AS(ArtifactStrengths(0, 0.5, 4, 0, 0.7, 2, 0.3), ConfigError);
  CHECK_THROWS_AS(ArtifactStrengths(3, 0.5, 4, 0, 0.0, 2, 0.3), ConfigError);
  CHECK_THROWS_AS(ArtifactStrengths(3, 0.5, 4, 0, 0.7, 0, 0.3), ConfigError);
}

TEST_CASE("test-set augmentation doubles the set with reproducible kinds") {
  TaskDataset d = generate_domain_dataset(domain_preset("decath"), 5, 2);
  const auto a = augment_test_set(d.subjects, ArtifactStrengths{}, 17);
  const auto b = augment_test_set(d.subjects, ArtifactStrengths{}, 17);
  REQUIRE(a.size() == 10);
  int flagged = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    flagged += a[i].is_artifact;
    CHECK(a[i].volume.is_artifact == a[i].is_artifact);
    CHECK(a[i].kind == b[i].kind);
    CHECK(a[i].volume.voxels == b[i].volume.voxels);
    CHECK(a[i].volume.shape == d.subjects[i % 5].shape);
    if (!a[i].is_artifact) {
      CHECK(a[i].volume.voxels == d.subjects[i].voxels);
    } else {
      CHECK(a[i].volume.mask == d.subjects[i - 5].mask);
    }
  }
  CHECK(flagged == 5);
  CHECK_THROWS_AS(augment_test_set({}, ArtifactStrengths{}, 1), InputError);
}
