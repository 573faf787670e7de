#include "featreplay/errors.hpp"
#include "featreplay/metrics.hpp"

#include <doctest.h>

#include <cmath>

using namespace featreplay;

TEST_CASE("dice") {
  const std::vector<std::uint8_t> a{0, 1, 1, 0, 1};
  CHECK(dice(a, a) == 1.0);
  CHECK(dice({1, 1, 0, 0}, {0, 0, 1, 1}) == 0.0);
  // |A| = 4, |B| = 6, |A and B| = 3: 2 * 3 / 10
  const std::vector<std::uint8_t> p{1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
  const std::vector<std::uint8_t> g{0, 1, 1, 1, 1, 1, 1, 0, 0, 0};
  CHECK(dice(p, g) == 0.6);
  CHECK(dice({0, 0, 0}, {0, 0, 0}) == 1.0);
  // macro average over two foreground classes: class 1 perfect, class 2 disjoint
  CHECK(dice({1, 2, 0}, {1, 0, 2}, 3) == 0.5);
  CHECK_THROWS_AS(dice({0, 1}, {0}), InputError);
}

TEST_CASE("expected calibration error") {
  CHECK(ece({1.0, 1.0, 1.0}, {1, 1, 1}) == 0.0);
  CHECK(ece({1.0, 1.0, 0.0}, {0, 0, 1}) == 1.0);

  // Bin 9: five pixels at confidence 0.95, four correct. Bin 7: five pixels
  // predicted background at confidence 0.7, three correct.
  const std::vector<double> probs{0.95, 0.95, 0.95, 0.95, 0.95, 0.3, 0.3, 0.3, 0.3, 0.3};
  const std::vector<std::uint8_t> labels{1, 1, 1, 1, 0, 0, 0, 0, 1, 1};
  const double expected = 0.5 * std::abs(0.8 - 0.95) + 0.5 * std::abs(0.6 - 0.7);
  CHECK(std::abs(ece(probs, labels) - expected) < 1e-9);

  EceAccumulator left, right, whole;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    (i < 4 ? left : right).add_binary(probs[i], labels[i]);
    whole.add_binary(probs[i], labels[i]);
  }
  left.merge(right);
  CHECK(left.count() == 10);
  CHECK(std::abs(left.value() - whole.value()) < 1e-15);
  CHECK(EceAccumulator{}.value() == 0.0);

  EceAccumulator edge;
  edge.add(1.0, true);  // confidence 1 lands in the last bin
  CHECK(edge.value() == 0.0);
}

TEST_CASE("backward transfer") {
  CHECK(bwt({{90.0, 10.0}, {60.0, 80.0}}) == -30.0);
  CHECK(bwt({{70.0, 1.0, 2.0}, {65.0, 50.0, 3.0}, {70.0, 50.0, 40.0}}) == 0.0);
  CHECK(bwt({{70.0, 1.0, 2.0}, {65.0, 50.0, 3.0}, {60.0, 44.0, 40.0}}) == -8.0);
  CHECK_THROWS(bwt({}));
}

TEST_CASE("forward transfer") {
  const Matrix r{{90.0, 5.0}, {50.0, 70.0}};
  const Matrix seq{{90.0, 5.0}, {10.0, 75.0}};
  CHECK(fwt(r, seq) == -5.0);
  CHECK(fwt(seq, seq) == 0.0);
  CHECK(fwt({{80.0, 1.0, 1.0}, {0.0, 60.0, 1.0}, {0.0, 0.0, 50.0}}, {{80.0, 1.0, 1.0}, {0.0, 70.0, 1.0}, {0.0, 0.0, 40.0}}) == 0.0);
  CHECK_THROWS_AS(fwt(r, {}), StateError);
}

TEST_CASE("auroc") {
  CHECK(auroc({1.0, 2.0}, {3.0, 4.0}) == 1.0);
  CHECK(auroc({3.0, 4.0}, {1.0, 2.0}) == 0.0);
  CHECK(auroc({1.0, 2.0}, {2.0, 0.5}) == 0.375);  // one win, one tie, two losses
}

TEST_CASE("mean and population standard deviation") {
  const MeanStd ms = mean_std({2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0});
  CHECK(ms.mean == 5.0);
  CHECK(ms.std == 2.0);
  CHECK(mean_std({}).mean == 0.0);
}
