#include "featreplay/datagen.hpp"
#include "featreplay/errors.hpp"
#include "featreplay/experiment.hpp"

#include "test_support.hpp"

#include <algorithm>
#include <set>

using namespace featreplay;

namespace {

double mean_foreground(const TaskDataset& d) {
  double sum = 0.0;
  long n = 0;
  for (const auto& v : d.subjects) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v.mask[i]) {
        sum += v.voxels[i];
        ++n;
      }
    }
  }
  return sum / static_cast<double>(n);
}

std::set<std::string> ids(const std::vector<Volume>& vs) {
  std::set<std::string> out;
  for (const auto& v : vs) out.insert(v.subject_id);
  return out;
}

}  // namespace

TEST_CASE("generation is pure in spec, count and seed") {
  const DomainSpec spec = domain_preset("decath");
  const TaskDataset a = generate_domain_dataset(spec, 25, 7);
  const TaskDataset b = generate_domain_dataset(spec, 25, 7);
  const TaskDataset c = generate_domain_dataset(spec, 25, 8);
  REQUIRE(a.subjects.size() == 25);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.subjects.size(); ++i) {
    CHECK(a.subjects[i].voxels == b.subjects[i].voxels);
    CHECK(a.subjects[i].mask == b.subjects[i].mask);
    any_diff = any_diff || a.subjects[i].voxels != c.subjects[i].voxels;
  }
  CHECK(any_diff);
}

TEST_CASE("every generated volume has a nonempty, valid mask") {
  for (const char* name : {"decath", "dryad", "harp", "bidmc", "ucl"}) {
    const TaskDataset d = generate_domain_dataset(domain_preset(name), 6, 3);
    for (const auto& v : d.subjects) {
      CHECK_NOTHROW(v.validate(1));
      CHECK(std::count(v.mask.begin(), v.mask.end(), 1) > 0);
    }
  }
}

TEST_CASE("coil domains are brighter in the foreground by at least the configured delta") {
  DomainSpec with = domain_preset("ucl");
  DomainSpec without = with;
  with.coil = true;
  without.coil = false;
  const double delta = with.coil_delta;
  const double diff = mean_foreground(generate_domain_dataset(with, 8, 5)) - mean_foreground(generate_domain_dataset(without, 8, 5));
  CHECK(diff >= delta);
}

TEST_CASE("domain spec validation") {
  DomainSpec d;
  d.shape = {0, 32, 32};
  CHECK_THROWS_AS(d.validate(), ConfigError);
  d = DomainSpec{};
  d.spacing = {1.0, -1.0, 1.0};
  CHECK_THROWS_AS(d.validate(), ConfigError);
  CHECK_THROWS_AS(domain_preset("nonexistent"), ConfigError);
}

TEST_CASE("split sizes follow 56/24/20 with the remainder in train") {
  const SplitCounts c25 = split_counts(25);
  CHECK(c25.train == 14);
  CHECK(c25.val == 6);
  CHECK(c25.test == 5);
  const SplitCounts c5 = split_counts(5);
  CHECK(c5.train == 3);
  CHECK(c5.val == 1);
  CHECK(c5.test == 1);
  CHECK_THROWS_AS(split_counts(4), SplitError);
}

TEST_CASE("split is a partition of the input") {
  TaskDataset d = generate_domain_dataset(domain_preset("decath"), 25, 1);
  const auto all = ids(d.subjects);
  const TaskDataset s = split_dataset(std::move(d), 9);
  const auto tr = ids(s.train), va = ids(s.val), te = ids(s.test);
  CHECK(s.subjects.empty());
  CHECK(tr.size() + va.size() + te.size() == all.size());
  std::set<std::string> uni = tr;
  uni.insert(va.begin(), va.end());
  uni.insert(te.begin(), te.end());
  CHECK(uni == all);
}

TEST_CASE("slicing runs along the coarsest axis with normalized positions") {
  Volume v;
  v.shape = {10, 32, 32};
  v.spacing = {2.0, 1.0, 1.0};
  v.voxels.assign(v.size(), 0.0f);
  v.mask.assign(v.size(), 0);
  const auto slices = slice_volume(v, 0, 32, 32);
  REQUIRE(slices.size() == 10);
  for (std::size_t k = 0; k < slices.size(); ++k) {
    CHECK(slices[k].image.height == 32);
    CHECK(slices[k].image.width == 32);
    CHECK(slices[k].s == doctest::Approx(static_cast<double>(k) / 9.0));
  }

  Volume single = v;
  single.shape = {1, 32, 32};
  single.voxels.assign(single.size(), 0.0f);
  single.mask.assign(single.size(), 0);
  const auto one = slice_volume(single, 0, 32, 32);
  REQUIRE(one.size() == 1);
  CHECK(one[0].s == 0.5);

  CHECK(slicing_axis({1.0, 1.0, 3.0}) == 2);
  CHECK(slicing_axis({1.0, 1.0, 1.0}) == 0);
}

TEST_CASE("crop/pad round trip through restack_slices") {
  Volume v;
  v.shape = {3, 28, 36};
  v.spacing = {3.0, 1.0, 1.0};
  v.voxels.assign(v.size(), 0.0f);
  v.mask.assign(v.size(), 0);
  for (int z = 0; z < 3; ++z) {
    for (int y = 4; y < 20; ++y) v.mask[v.index(z, y, 10 + z)] = 1;
  }
  const auto slices = slice_volume(v, 0, 32, 32);
  std::vector<std::vector<std::uint8_t>> masks;
  for (const auto& s : slices) masks.push_back(s.mask);
  // columns 0..1 and 34..35 are cropped away; the mask lies inside the crop.
  CHECK(restack_slices(v, masks, 32, 32) == v.mask);
}

TEST_CASE("feature dimension calculator") {
  CHECK(feature_dimension({5, 7, 5}, 256) == 44800);
  CHECK(slicewise_feature_dimension({5, 7, 5}, 256, 0) == 8960);
  CHECK(feature_dimension({4, 4}, 32) == 512);
  CHECK_THROWS_AS(slicewise_feature_dimension({5, 7, 5}, 256, 3), ConfigError);
}

TEST_CASE("raw volume format round trip") {
  const auto dir = testing::scratch_dir("volume_io");
  TaskDataset d = generate_domain_dataset(domain_preset("harp"), 5, 4);
  write_volume(d.subjects[0], dir, "b");
  write_volume(d.subjects[1], dir, "a");
  const auto back = read_volume_dir(dir);
  REQUIRE(back.size() == 2);
  CHECK(back[0].voxels == d.subjects[1].voxels);
  CHECK(back[1].mask == d.subjects[0].mask);
  CHECK(back[1].shape == d.subjects[0].shape);
  CHECK(back[1].spacing == d.subjects[0].spacing);
  CHECK_THROWS_AS(read_volume(dir / "missing.json"), InputError);
}
