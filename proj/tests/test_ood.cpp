#include "featreplay/artifacts.hpp"
#include "featreplay/errors.hpp"
#include "featreplay/ood.hpp"

#include "fixtures.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

using namespace featreplay;

TEST_CASE("percentile and threshold calibration") {
  std::vector<double> scores(100);
  std::iota(scores.begin(), scores.end(), 1.0);
  std::reverse(scores.begin(), scores.end());
  CHECK(percentile_linear(scores, 0.95) == doctest::Approx(95.05).epsilon(1e-12));
  CHECK(calibrate_threshold(scores) == doctest::Approx(95.05).epsilon(1e-12));

  const std::vector<double> flat(7, 3.25);
  const double tau = calibrate_threshold(flat);
  CHECK(tau == 3.25);
  for (double s : flat) CHECK(classify(s, tau));

  // Small lists: the order statistic keeps the guarantee the interpolation alone would miss.
  for (std::size_t n = 5; n < 60; ++n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::pow(1.7, static_cast<double>(i % 13)) + static_cast<double>(i);
    const double t = calibrate_threshold(v);
    const auto inside = std::count_if(v.begin(), v.end(), [&](double s) { return classify(s, t); });
    CHECK(static_cast<double>(inside) >= 0.95 * static_cast<double>(n));
  }

  CHECK_THROWS_AS(calibrate_threshold({}), StateError);
  CHECK_THROWS_AS(calibrate_threshold({1.0, 2.0}), InputError);
  CHECK_THROWS_AS(calibrate_threshold({1.0, 2.0, 3.0, 4.0, std::numeric_limits<double>::quiet_NaN()}), InputError);
  CHECK_THROWS_AS(percentile_linear({}, 0.5), StateError);
}

TEST_CASE("classification boundary") {
  const double tau = 1.5;
  CHECK(classify(1.5, tau));
  CHECK_FALSE(classify(std::nextafter(1.5, 2.0), tau));
  bool was_ood = false;
  for (double s = 0.0; s < 3.0; s += 0.01) {
    const bool id = classify(s, tau);
    CHECK_FALSE((was_ood && id));
    was_ood = was_ood || !id;
  }
}

TEST_CASE("mahalanobis distance") {
  DiagGaussian g{Vec::Zero(2), Vec(2)};
  g.var << 4.0, 1.0;
  Vec x(2);
  x << 2.0, 1.0;
  CHECK(mahalanobis_distance(x, g) == doctest::Approx(std::sqrt(2.0)));
  CHECK(mahalanobis_distance(g.mean, g) == 0.0);
  DiagGaussian unit{Vec::Constant(3, 1.0), Vec::Ones(3)};
  Vec y(3);
  y << 2.0, -1.0, 1.0;
  CHECK(mahalanobis_distance(y, unit) == doctest::Approx((y - unit.mean).norm()));

  Mat cols(2, 4);
  cols << 1, 2, 3, 4,
          0, 0, 0, 0;
  const DiagGaussian fit = fit_gaussian(cols, 0.0);
  CHECK(fit.mean[0] == 2.5);
  CHECK(fit.var[0] == doctest::Approx(1.25));
  CHECK(fit.var[1] == 0.0);
  CHECK(fit_gaussian(cols).var[1] == 1e-6);
}

TEST_CASE("max-softmax score extremes") {
  UNet2D net(UNetConfig{}, 3);
  const Volume& v = testing::tiny_stream().tasks[0].test.front();
  nn::Param* head_w = nullptr;
  nn::Param* head_b = nullptr;
  for (auto* p : net.all_params()) {
    if (p->name == "head.weight") head_w = p;
    if (p->name == "head.bias") head_b = p;
  }
  REQUIRE(head_w);
  REQUIRE(head_b);
  head_w->value.setZero();
  head_b->value.setZero();
  CHECK(max_softmax_score(net, v) == doctest::Approx(0.5).epsilon(1e-12));
  head_b->value(0, 0) = 800.0;
  CHECK(max_softmax_score(net, v) == doctest::Approx(0.0));
}

TEST_CASE("reconstruction scores of the trained model") {
  const Trajectory& traj = testing::trained_ccvae();
  const Ccvae& vae = *traj.vae;
  const UNet2D& unet = *traj.unet;
  const TaskStream& stream = testing::default_stream();
  const Volume& val = stream.tasks[0].val.front();

  SUBCASE("single seen task") {
    const TaskScores s = reconstruction_score(vae, unet, val, {0});
    REQUIRE(s.per_task.size() == 1);
    CHECK(s.score == s.per_task.at(0));
    CHECK(s.best_task == 0);
    const TaskScores both = reconstruction_score(vae, unet, val, {0, 1});
    CHECK(both.score == std::min(both.per_task.at(0), both.per_task.at(1)));
  }
  SUBCASE("mean over slices ignores their order") {
    auto slices = slice_volume(val, 0, 32, 32);
    FeatureBatch batch;
    for (const auto& s : slices) {
      batch.tasks.push_back(0);
      batch.slices.push_back(s.s);
    }
    batch.features = vae.normalize(unet.encode_features(slices), batch.tasks);
    const double forward = vae.reconstruction_errors(batch).mean();
    FeatureBatch reversed = batch;
    reversed.features = batch.features.rowwise().reverse();
    std::reverse(reversed.slices.begin(), reversed.slices.end());
    CHECK(vae.reconstruction_errors(reversed).mean() == doctest::Approx(forward).epsilon(1e-12));
    CHECK(reconstruction_score(vae, unet, val, {0}).score == doctest::Approx(forward).epsilon(1e-12));
  }
  SUBCASE("heavy spiking raises the score") {
    const ArtifactStrengths heavy(3, 0.5, 4, 0, 0.7, 4, 1.0);
    for (std::size_t i = 0; i < stream.tasks[0].val.size(); ++i) {
      const Volume& v = stream.tasks[0].val[i];
      const Volume spiked = apply_artifact(v, ArtifactKind::Spiking, heavy, 40 + i);
      CHECK(reconstruction_score(vae, unet, v, {0, 1}).score < reconstruction_score(vae, unet, spiked, {0, 1}).score);
    }
  }
  SUBCASE("scoring preconditions") {
    Ccvae fresh(vae.config(), 1);
    CHECK_THROWS_AS(reconstruction_score(fresh, unet, val, {0}), StateError);
    CHECK_THROWS_AS(reconstruction_score(vae, unet, val, {}), StateError);
    CHECK_THROWS_AS(mahalanobis_score(vae, unet, val, {0, 1}, {}), StateError);
  }
}

TEST_CASE("thresholds pool the validation scores of every seen task") {
  const Trajectory& traj = testing::trained_ccvae();
  const TaskStream& stream = testing::default_stream();
  std::size_t pooled = 0;
  for (std::size_t stage = 0; stage < traj.stages.size(); ++stage) {
    pooled += stream.tasks[stage].val.size();
    for (const auto& sc : traj.stages[stage].scorers) {
      CHECK(sc.val_scores.size() == pooled);
      CHECK(sc.tau == calibrate_threshold(sc.val_scores));
    }
  }
}
