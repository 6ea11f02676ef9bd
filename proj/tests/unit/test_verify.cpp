#include <doctest.h>

#include <cmath>
#include <random>

#include "nowcast/error.hpp"
#include "nowcast/verify.hpp"

using namespace nowcast;

namespace {

RainGrid zeros(std::size_t n) { return RainGrid::filled(n, n, 0.0f); }

RainGrid with(RainGrid g, std::size_t r, std::size_t c, float v) {
  std::vector<float> vals(g.values().begin(), g.values().end());
  vals[r * g.cols() + c] = v;
  return RainGrid(g.rows(), g.cols(), std::move(vals));
}

RainGrid random_field(std::mt19937_64& rng, std::size_t n) {
  std::vector<float> v(n * n);
  for (auto& x : v) {
    const auto k = rng() % 10;
    x = k == 0 ? kMissing : k < 4 ? 0.0f : static_cast<float>(rng() % 12000) / 100.0f;
  }
  return RainGrid(n, n, std::move(v));
}

}  // namespace

TEST_SUITE("verify") {

TEST_CASE("contingency table by enumeration") {
  const RainGrid pred(2, 2, {10.0f, 10.0f, 1.0f, 1.0f});
  const RainGrid obs(2, 2, {10.0f, 1.0f, 10.0f, 1.0f});
  const auto t = contingency(pred, obs, PrecipCategory::Heavy);
  CHECK(t == ContingencyTable{1, 1, 1, 1});
  CHECK(*csi(t) == doctest::Approx(1.0 / 3.0));

  CHECK(contingency(obs, obs, PrecipCategory::Heavy).fp == 0);
  CHECK(contingency(obs, obs, PrecipCategory::Heavy).fn == 0);
  CHECK(contingency(pred, RainGrid::filled(2, 2, kMissing), PrecipCategory::Heavy).total() == 0);
  CHECK_THROWS_AS(contingency(pred, zeros(3), PrecipCategory::Heavy), ShapeError);
}

TEST_CASE("CSI values and the no-event case") {
  CHECK(csi({1, 0, 0, 5}) == 1.0);
  CHECK(csi({0, 3, 2, 5}) == 0.0);
  CHECK(csi({2, 1, 1, 0}) == 0.5);
  CHECK_FALSE(csi({0, 0, 0, 9}).has_value());
}

TEST_CASE("CSI is bounded and monotone in misses and false alarms") {
  for (std::uint64_t tp = 0; tp < 5; ++tp)
    for (std::uint64_t fp = 0; fp < 5; ++fp)
      for (std::uint64_t fn = 0; fn < 5; ++fn) {
        const auto c = csi({tp, fp, fn, 0});
        if (!c) continue;
        CHECK(*c >= 0.0);
        CHECK(*c <= 1.0);
        CHECK(*csi({tp, fp + 1, fn, 0}) <= *c);
        CHECK(*csi({tp, fp, fn + 1, 0}) <= *c);
      }
}

TEST_CASE("binary probability bounds are half-open") {
  const RateBounds heavy = category_bounds(PrecipCategory::Heavy);
  const auto bp = binary_probability(RainGrid(1, 3, {7.5f, 50.0f, kMissing}), heavy);
  CHECK(bp.value == std::vector<std::uint8_t>{1, 0, 0});
  CHECK(bp.valid == std::vector<std::uint8_t>{1, 1, 0});
  CHECK_THROWS_AS(binary_probability(zeros(2), RateBounds{5.0, 5.0}), ValidationError);

  // CSI at the category edges
  const auto at_lower = contingency(RainGrid(1, 1, {7.5f}), RainGrid(1, 1, {7.5f}), PrecipCategory::Heavy);
  CHECK(csi(at_lower) == 1.0);
  const auto at_upper = contingency(RainGrid(1, 1, {50.0f}), RainGrid(1, 1, {7.5f}), PrecipCategory::Heavy);
  CHECK(csi(at_upper) == 0.0);
}

TEST_CASE("neighborhood probability with shrinking border windows") {
  BinaryField bp{3, 3, std::vector<std::uint8_t>(9, 0), std::vector<std::uint8_t>(9, 1)};
  bp.value[4] = 1;
  const auto np = neighborhood_probability(bp, 3);
  CHECK(np.value[0] == doctest::Approx(1.0 / 4.0));
  CHECK(np.value[1] == doctest::Approx(1.0 / 6.0));
  CHECK(np.value[4] == doctest::Approx(1.0 / 9.0));

  const auto id = neighborhood_probability(bp, 1);
  for (std::size_t i = 0; i < 9; ++i) CHECK(id.value[i] == bp.value[i]);

  BinaryField ones{4, 5, std::vector<std::uint8_t>(20, 1), std::vector<std::uint8_t>(20, 1)};
  for (std::size_t n : {1u, 3u, 5u, 9u})
    for (double v : neighborhood_probability(ones, n).value) CHECK(v == 1.0);
  CHECK_THROWS_AS(neighborhood_probability(bp, 2), ValidationError);
}

TEST_CASE("FSS on the displaced single-event case matches the reference oracle") {
  const auto obs = with(zeros(5), 1, 1, 10.0f);
  const auto pred = with(zeros(5), 2, 2, 10.0f);
  const auto p = FssParams::for_category(PrecipCategory::Heavy, 3);
  CHECK(*fss(pred, obs, p) == doctest::Approx(0.29561200923787534).epsilon(1e-12));
  CHECK(*fss_bruteforce(pred, obs, p) == doctest::Approx(0.29561200923787534).epsilon(1e-12));
}

TEST_CASE("FSS trivial cases") {
  const auto a = with(zeros(8), 1, 1, 10.0f);
  const auto p = FssParams::for_category(PrecipCategory::Heavy, 3);
  CHECK(*fss(a, a, p) == 1.0);
  CHECK(*fss(with(zeros(8), 6, 6, 10.0f), a, p) == 0.0);
  CHECK_FALSE(fss(zeros(8), zeros(8), p).has_value());
  // neighbourhood covering the domain from every cell
  CHECK(*fss(with(zeros(8), 7, 0, 10.0f), a, FssParams::for_category(PrecipCategory::Heavy, 15)) ==
        doctest::Approx(1.0));
  CHECK_THROWS_AS(fss(a, zeros(7), p), ShapeError);
  CHECK_THROWS_AS(fss(a, a, FssParams::for_category(PrecipCategory::Heavy, 4)), ValidationError);
}

TEST_CASE("optimized FSS agrees with brute force and is symmetric") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 60; ++i) {
    const auto a = random_field(rng, 16), b = random_field(rng, 16);
    for (auto cat : kRainCategories)
      for (std::size_t n : {1u, 3u, 5u}) {
        const auto p = FssParams::for_category(cat, n);
        const auto fast = fss(a, b, p), slow = fss_bruteforce(a, b, p);
        REQUIRE(fast.has_value() == slow.has_value());
        if (!fast) continue;
        CHECK(std::abs(*fast - *slow) < 1e-9);
        CHECK(std::abs(*fast - *fss(b, a, p)) < 1e-12);
        CHECK(*fast >= 0.0);
        CHECK(*fast <= 1.0 + 1e-12);
      }
  }
}

TEST_CASE("FSS only sees the binarization") {
  std::mt19937_64 rng(5);
  const auto a = random_field(rng, 12), b = random_field(rng, 12);
  // Move every value within its category.
  std::vector<float> shifted(b.values().begin(), b.values().end());
  for (auto& v : shifted) {
    if (v == kMissing || v == 0.0f) continue;
    const auto bounds = category_bounds(categorize(v));
    v = static_cast<float>(bounds.lower + 0.5 * (std::min(bounds.upper, 200.0) - bounds.lower));
  }
  const RainGrid b2(12, 12, shifted);
  for (auto cat : kRainCategories) {
    const auto p = FssParams::for_category(cat, 3);
    const auto x = fss(a, b, p), y = fss(a, b2, p);
    REQUIRE(x.has_value() == y.has_value());
    if (x) CHECK(*x == doctest::Approx(*y).epsilon(1e-12));
  }
}

TEST_CASE("KS statistic") {
  auto hist = [](std::vector<double> m) { return Histogram{0.0, 1.0, std::move(m)}; };
  CHECK(ks_statistic({hist({0.5, 0.5, 0.0}), hist({0.0, 0.5, 0.5})}) == doctest::Approx(0.5));
  CHECK(ks_statistic({hist({0.2, 0.3, 0.5}), hist({0.2, 0.3, 0.5})}) == 0.0);
  CHECK(ks_statistic({hist({1.0, 0.0}), hist({0.0, 1.0})}) == 1.0);
  CHECK_THROWS_AS(ks_statistic({hist({1.0, 0.0}), hist({0.0, 0.0, 1.0})}), ValidationError);
  CHECK_THROWS_AS(ks_statistic({hist({0.7, 0.0}), hist({0.0, 1.0})}), ValidationError);
}

TEST_CASE("KL divergence") {
  auto hist = [](std::vector<double> m) { return Histogram{0.0, 1.0, std::move(m)}; };
  CHECK(kl_divergence({hist({1.0, 0.0}), hist({0.5, 0.5})}, 1e-12) == doctest::Approx(0.6931471805313141).epsilon(1e-12));
  CHECK(kl_divergence({hist({0.3, 0.7}), hist({0.3, 0.7})}) == 0.0);
  CHECK_THROWS_AS(kl_divergence({hist({0.3, 0.7}), hist({0.3, 0.7})}, 0.0), ValidationError);

  std::mt19937_64 rng(8);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> p(8), q(8);
    double sp = 0, sq = 0;
    for (int k = 0; k < 8; ++k) {
      p[k] = static_cast<double>(rng() % 100);
      q[k] = static_cast<double>(rng() % 100);
      sp += p[k];
      sq += q[k];
    }
    if (sp == 0 || sq == 0) continue;
    for (int k = 0; k < 8; ++k) p[k] /= sp, q[k] /= sq;
    const HistogramPair pair{hist(p), hist(q)};
    CHECK(kl_divergence(pair) >= 0.0);
    const double d = ks_statistic(pair);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
  }
}

TEST_CASE("histograms and band comparison") {
  const std::vector<float> v{0.0f, 0.1f, 0.5f, 0.99f, 1.0f, 2.0f, -1.0f};
  const auto h = make_histogram(v, 0.0, 1.0, 4);
  CHECK(h.mass[0] == doctest::Approx(3.0 / 7.0));  // 0, 0.1 and the clamped -1
  CHECK(h.mass[3] == doctest::Approx(3.0 / 7.0));
  CHECK_THROWS_AS(make_histogram({}, 0.0, 1.0), ValidationError);

  std::vector<Field> bands_a, bands_b;
  for (std::size_t b = 0; b < kSatBands; ++b) {
    bands_a.emplace_back(2, 2, std::vector<float>{0.1f, 0.2f, 0.8f, 0.9f});
    bands_b.emplace_back(2, 2, std::vector<float>{0.9f, 0.8f, 0.2f, 0.1f});
  }
  const SatScene a(bands_a), b(bands_b);
  const RainGrid ra(2, 2, {10.0f, 10.0f, 0.0f, 0.0f});
  BandStats edges;
  edges.scenes = 1;
  edges.min.fill(0.0);
  edges.max.fill(1.0);
  const auto cmp = compare_events(a, ra, b, ra, PrecipCategory::Heavy, edges);
  REQUIRE(cmp.size() == kSatBands);
  CHECK(cmp[0].cells_a == 2);
  CHECK(*cmp[0].ks == 1.0);
  CHECK(*cmp[0].kl > 1.0);
  const auto none = compare_events(a, ra, b, ra, PrecipCategory::Violent, edges);
  CHECK_FALSE(none[0].ks.has_value());
  CHECK(*compare_events(a, ra, a, ra, PrecipCategory::Heavy, edges)[5].ks == 0.0);
}

}  // TEST_SUITE
