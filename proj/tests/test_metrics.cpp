#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "calattn/errors.hpp"
#include "calattn/metrics.hpp"
#include "metric_oracles.hpp"

using namespace calattn;

namespace {

Prediction top_only(double conf, bool correct) {
  Prediction p;
  p.confidence = conf;
  p.predicted = 0;
  p.label = correct ? 0 : 1;
  p.correct = correct;
  return p;
}

PredictionBatch from_pairs(std::initializer_list<std::pair<double, bool>> rows) {
  PredictionBatch b;
  for (auto [c, ok] : rows) b.samples.push_back(top_only(c, ok));
  return b;
}

PredictionBatch hand_case() { return from_pairs({{0.9, true}, {0.8, true}, {0.6, false}, {0.55, true}}); }

}  // namespace

TEST_CASE("predictions from probabilities") {
  auto p = Prediction::from_probs(std::vector<double>{0.2, 0.5, 0.3}, 1);
  CHECK(p.confidence == 0.5);
  CHECK(p.predicted == 1);
  CHECK(p.correct);
  auto tie = Prediction::from_probs(std::vector<double>{0.4, 0.4, 0.2}, 1);
  CHECK(tie.predicted == 0);
  CHECK_FALSE(tie.correct);

  const std::vector<double> probs{0.7, 0.3, 0.1, 0.9};
  const std::vector<int> labels{0, 0};
  auto b = make_batch(probs, 2, labels);
  CHECK(b.size() == 2);
  CHECK(b.accuracy() == 0.5);
  CHECK(b.has_probs());
  CHECK_THROWS_AS(make_batch(probs, 3, labels), ShapeMismatch);
}

TEST_CASE("equal-width bin edges") {
  CHECK(equal_width_bin(0.0, 15) == 1);
  CHECK(equal_width_bin(1.0, 15) == 15);
  CHECK(equal_width_bin(0.5, 2) == 1);
  CHECK(equal_width_bin(0.5000001, 2) == 2);
  for (std::size_t m = 1; m <= 15; ++m) {
    const double e = static_cast<double>(m) / 15.0;
    CHECK(equal_width_bin(e, 15) == m);
    if (m < 15) CHECK(equal_width_bin(std::nextafter(e, 2.0), 15) == m + 1);
  }
}

TEST_CASE("hand case binning") {
  const auto b = hand_case();
  auto bins = bin_stats(b, 2, Binning::equal_width);
  REQUIRE(bins.size() == 2);
  CHECK(bins[0].count == 0);
  CHECK(bins[1].count == 4);
  CHECK(bins[1].acc == 0.75);
  CHECK(bins[1].conf == doctest::Approx(0.7125).epsilon(1e-15));
  CHECK(ece(b, 2) == doctest::Approx(0.0375).epsilon(1e-13));
  CHECK(mce(b, 2) == doctest::Approx(0.0375).epsilon(1e-13));
  CHECK(ada_ece(b, 2) == doctest::Approx(0.1125).epsilon(1e-13));
  CHECK(smece(b) == doctest::Approx(0.1486235457181378).epsilon(1e-12));

  const auto table = reliability_table(b, 2);
  CHECK(table.bins.size() == 2);
  CHECK(table.bins[1].gap == bins[1].gap);
  CHECK(table.ece == ece(b, 2));

  auto one = bin_stats(b, 1, Binning::equal_width);
  CHECK(one.size() == 1);
  CHECK(one[0].acc == b.accuracy());
}

TEST_CASE("metric edge values") {
  auto wrong = from_pairs({{1.0, false}, {1.0, false}});
  CHECK(ece(wrong) == 1.0);
  auto perfect = from_pairs({{1.0, true}, {1.0, true}, {1.0, true}});
  CHECK(ece(perfect) == 0.0);
  CHECK(mce(perfect) == 0.0);
  CHECK(ada_ece(perfect) == 0.0);
  CHECK(smece(perfect) == 0.0);

  PredictionBatch seventy;
  for (int i = 0; i < 10; ++i) seventy.samples.push_back(top_only(0.7, i < 7));
  CHECK(std::abs(smece(seventy)) < 1e-12);
  CHECK(std::abs(ece(seventy)) < 1e-15);

  auto two = from_pairs({{0.25, true}, {0.25, true}, {0.25, false}, {0.25, false}, {0.95, true}, {0.95, false}});
  // Gaps 0.25 and 0.45.
  CHECK(mce(two, 10) == doctest::Approx(0.45));

  PredictionBatch empty;
  CHECK_THROWS_AS(ece(empty), EmptyBatch);
  CHECK_THROWS_AS(ada_ece(empty), EmptyBatch);
  CHECK_THROWS_AS(smece(empty), EmptyBatch);
  CHECK_THROWS_AS(classwise_ece(hand_case()), MissingProbs);
}

TEST_CASE("equal-mass bins") {
  PredictionBatch same;
  for (int i = 0; i < 10; ++i) same.samples.push_back(top_only(0.5, i % 3 == 0));
  auto bins = bin_stats(same, 3, Binning::equal_mass);
  REQUIRE(bins.size() == 3);
  CHECK(bins[0].count == 4);
  CHECK(bins[1].count == 3);
  CHECK(bins[2].count == 3);
  // Stable order: samples 0..3, 4..6, 7..9.
  CHECK(bins[0].acc == 0.5);
  CHECK(bins[1].acc == doctest::Approx(1.0 / 3));
  CHECK(bins[2].acc == doctest::Approx(1.0 / 3));

  auto b = hand_case();
  double per_sample = 0.0;
  for (const auto& p : b.samples) per_sample += std::abs((p.correct ? 1.0 : 0.0) - p.confidence);
  CHECK(ada_ece(b, 4) == doctest::Approx(per_sample / 4).epsilon(1e-14));
  CHECK(bin_stats(b, 9, Binning::equal_mass).size() == 4);
}

TEST_CASE("classwise ECE") {
  const std::vector<double> onehot{1, 0, 0, 0, 1, 0, 0, 0, 1};
  const std::vector<int> labels{0, 1, 2};
  CHECK(classwise_ece(make_batch(onehot, 3, labels)) == 0.0);

  // Two classes: mean of the per-column ECEs.
  std::mt19937_64 rng(40);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> probs;
  std::vector<int> y;
  for (int i = 0; i < 40; ++i) {
    const double p = u(rng);
    probs.push_back(p);
    probs.push_back(1.0 - p);
    y.push_back(u(rng) < 0.5 ? 0 : 1);
  }
  auto b = make_batch(probs, 2, y);
  PredictionBatch c0, c1;
  for (std::size_t i = 0; i < y.size(); ++i) {
    c0.samples.push_back(top_only(probs[2 * i], y[i] == 0));
    c1.samples.push_back(top_only(probs[2 * i + 1], y[i] == 1));
  }
  CHECK(classwise_ece(b) == doctest::Approx((ece(c0) + ece(c1)) / 2).epsilon(1e-14));
}

TEST_CASE("auroc and hcfp") {
  CHECK(auroc(from_pairs({{0.9, true}, {0.8, true}, {0.85, false}, {0.1, false}})) == 0.75);
  CHECK(auroc(from_pairs({{0.9, true}, {0.8, true}, {0.3, false}})) == 1.0);
  CHECK(auroc(from_pairs({{0.6, true}, {0.6, false}, {0.6, true}})) == 0.5);
  CHECK_THROWS_AS(auroc(from_pairs({{0.6, true}, {0.7, true}})), DegenerateLabels);

  auto b = from_pairs({{0.95, false}, {0.91, false}, {0.5, false}, {0.99, true}});
  CHECK(hcfp(b, 0.9).count == 2);
  CHECK(hcfp(b, 0.9).per_thousand == 500.0);
  CHECK(hcfp(b, 0.0).count == 3);
  CHECK(hcfp(from_pairs({{0.99, true}}), 0.9).count == 0);
}

TEST_CASE("correlations") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  std::vector<double> lin, cube;
  for (double v : x) {
    lin.push_back(2 * v + 1);
    cube.push_back(-v * v * v);
  }
  CHECK(pearson(x, lin) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(spearman(x, lin) == doctest::Approx(1.0).epsilon(1e-15));
  const double r = pearson(x, cube);
  CHECK(r < 0.0);
  CHECK(r > -1.0);
  CHECK(spearman(x, cube) == doctest::Approx(-1.0).epsilon(1e-15));

  const std::vector<double> a{1, 2, 2, 3, 4}, b{1, 3, 2, 5, 4};
  CHECK(pearson(a, b) == doctest::Approx(0.8320502943378436).epsilon(1e-14));
  CHECK(spearman(a, b) == doctest::Approx(0.8720815992723809).epsilon(1e-14));
  const std::vector<double> c{0.1, 0.4, 0.35, 0.8, 0.9}, d{2.0, 1.5, 3.0, 4.5, 4.0};
  CHECK(pearson(c, d) == doctest::Approx(0.8259622956817836).epsilon(1e-14));
  CHECK(spearman(c, d) == doctest::Approx(0.6).epsilon(1e-14));

  CHECK(average_ranks(std::vector<double>{3, 1, 3, 2}) == std::vector<double>{3.5, 1, 3.5, 2});
  CHECK_THROWS_AS(pearson(x, std::vector<double>(5, 1.0)), ZeroVariance);
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{2}), ZeroVariance);
}

TEST_CASE("metrics match brute-force oracles") {
  std::mt19937_64 rng(41);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    auto b = oracle::random_batch(rng);
    const auto s = oracle::top_label(b);
    for (std::size_t M : {1u, 2u, 7u, 15u}) {
      worst = std::max(worst, std::abs(ece(b, M) - oracle::ece(s, M)));
      worst = std::max(worst, std::abs(mce(b, M) - oracle::mce(s, M)));
      worst = std::max(worst, std::abs(ada_ece(b, M) - oracle::ada_ece(s, M)));
      worst = std::max(worst, std::abs(classwise_ece(b, M) - oracle::classwise_ece(b, M)));
    }
    worst = std::max(worst, std::abs(smece(b) - oracle::smece(s, 0.05)));
    const bool mixed = std::any_of(s.begin(), s.end(), [](auto& x) { return x.hit; }) &&
                       std::any_of(s.begin(), s.end(), [](auto& x) { return !x.hit; });
    if (mixed) worst = std::max(worst, std::abs(auroc(b) - oracle::auroc(s)));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("metric invariants") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    auto b = oracle::random_batch(rng);
    const auto table = reliability_table(b, 15);
    double sum = 0.0;
    std::size_t total = 0;
    for (const auto& bin : table.bins) {
      if (bin.count > 0) sum += static_cast<double>(bin.count) / static_cast<double>(b.size()) * bin.gap;
      total += bin.count;
    }
    CHECK(sum == ece(b, 15));
    CHECK(total == b.size());

    double mean_conf = 0.0;
    for (const auto& p : b.samples) mean_conf += p.confidence;
    mean_conf /= static_cast<double>(b.size());
    CHECK(ece(b, 1) == doctest::Approx(std::abs(b.accuracy() - mean_conf)).epsilon(1e-14));

    auto mass = bin_stats(b, 15, Binning::equal_mass);
    auto [lo, hi] = std::minmax_element(mass.begin(), mass.end(),
                                        [](const BinStats& x, const BinStats& y) { return x.count < y.count; });
    CHECK(hi->count - lo->count <= 1);

    // Permutation without confidence ties leaves every metric unchanged.
    PredictionBatch shuffled = b;
    std::shuffle(shuffled.samples.begin(), shuffled.samples.end(), rng);
    CHECK(ece(shuffled) == doctest::Approx(ece(b)).epsilon(1e-14));
    CHECK(smece(shuffled) == doctest::Approx(smece(b)).epsilon(1e-12));
    CHECK(classwise_ece(shuffled) == doctest::Approx(classwise_ece(b)).epsilon(1e-14));
    if (b.accuracy() > 0.0 && b.accuracy() < 1.0) {
      CHECK(auroc(shuffled) == doctest::Approx(auroc(b)).epsilon(1e-14));
      PredictionBatch warped = b;
      for (auto& p : warped.samples) p.confidence = std::pow(p.confidence, 3.0) * 0.5;
      CHECK(auroc(warped) == auroc(b));
    }
  }
}
