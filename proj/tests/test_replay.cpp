#include "featreplay/errors.hpp"
#include "featreplay/nn/checkpoint.hpp"
#include "featreplay/replay.hpp"

#include "fixtures.hpp"
#include "test_support.hpp"

#include <set>

using namespace featreplay;

TEST_CASE("slice grid") {
  const auto g = slice_grid(8);
  REQUIRE(g.size() == 8);
  CHECK(g.front() == 0.0);
  CHECK(g.back() == 1.0);
  CHECK(g[1] == doctest::Approx(1.0 / 7.0));
  CHECK(slice_grid(1) == std::vector<double>{0.5});
}

TEST_CASE("memory construction") {
  const Trajectory& traj = testing::trained_ccvae();
  const Ccvae& vae = *traj.vae;
  const UNet2D& unet = *traj.unet;

  const Memory m = build_memory(vae, unet, {0, 1}, 50, 123);
  CHECK(m.size() == 100);
  CHECK(m.count(0) == 50);
  CHECK(m.count(1) == 50);
  CHECK(m.capacity_per_task == 50);
  for (int t : {0, 1}) {
    std::set<double> strata;
    for (const auto& e : m.entries) {
      if (e.task == t) strata.insert(e.s);
    }
    CHECK(strata.size() >= 8);
  }
  for (const auto& e : m.entries) {
    CHECK(e.u.size() == unet.feature_dim());
    for (Eigen::Index c = 0; c < e.soft_label.cols(); ++c) CHECK(std::abs(e.soft_label.col(c).sum() - 1.0) < 1e-9);
  }

  const Memory again = build_memory(vae, unet, {0, 1}, 50, 123);
  REQUIRE(again.size() == m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    CHECK(again.entries[i].u == m.entries[i].u);
    CHECK(again.entries[i].soft_label == m.entries[i].soft_label);
    CHECK(again.entries[i].s == m.entries[i].s);
  }

  CHECK(build_memory(vae, unet, {0}, 0, 1).empty());
  CHECK_THROWS_AS(build_memory(vae, unet, {0}, -1, 1), ConfigError);
  Ccvae untrained(vae.config(), 1);
  CHECK_THROWS_AS(build_memory(untrained, unet, {0}, 4, 1), StateError);
}

TEST_CASE("pseudo labels") {
  const Trajectory& traj = testing::trained_ccvae();
  const UNet2D& unet = *traj.unet;
  const Memory m = build_memory(*traj.vae, unet, {0}, 40, 9);
  int nonempty = 0;
  for (const auto& e : m.entries) {
    const Mat p = pseudo_label(unet, e.u);
    CHECK(p == pseudo_label(unet, e.u));
    CHECK((p - e.soft_label).cwiseAbs().maxCoeff() < 1e-12);
    nonempty += (p.row(1).array() > 0.5).cast<double>().mean() >= 0.01;
  }
  INFO("nonempty " << nonempty << "/40");
  CHECK(nonempty >= 20);
  CHECK_THROWS_AS(pseudo_label(unet, Vec::Zero(3)), InputError);
}

TEST_CASE("flush and privacy audit") {
  const Trajectory& traj = testing::trained_ccvae();
  Ccvae vae = *traj.vae;
  UNet2D unet = *traj.unet;
  Memory m = build_memory(vae, unet, {0, 1}, 8, 4);
  std::vector<std::vector<double>> generated;
  for (const auto& e : m.entries) generated.emplace_back(e.u.data(), e.u.data() + e.u.size());
  // real features of an earlier task must not be persisted either
  const auto real = unet.encode_features(task_slices(testing::default_stream().tasks[0].train, 0, unet.config()));
  for (Eigen::Index c = 0; c < 5; ++c) {
    const Vec col = real.col(c);
    generated.emplace_back(col.data(), col.data() + col.size());
  }

  flush_memory(m);
  CHECK(m.size() == 0);
  CHECK(m.entries.capacity() == 0);
  flush_memory(m);
  CHECK(m.empty());

  const auto root = testing::scratch_dir("flush_audit");
  unet.save(root / "unet", 2);
  vae.save(root / "vae");
  const nn::AuditReport report = nn::audit_artifacts(root, generated);
  for (const auto& f : report.findings) MESSAGE(f);
  CHECK(report.clean);
  CHECK(report.checkpoints == 2);
}
